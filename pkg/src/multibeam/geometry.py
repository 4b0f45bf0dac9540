"""Planar node geometry, switched-beam gain tables and the free-space link budget."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

SPEED_OF_LIGHT_M_S = 299_792_458.0

GAIN_TABLE_HEADER = (
    "Polar (rows) and Azimuth (columns) values in degrees, gain cell values in dB."
)

# Two-valued pattern defaults: one flat main lobe over the half-power widths,
# one flat floor everywhere else.
DEFAULT_MAIN_LOBE_DB = 25.023
DEFAULT_SIDE_LOBE_DB = -0.087
DEFAULT_GRID_STEP_DEG = 5.0


class InvalidParameterError(ValueError):
    """A physically meaningless argument (non-positive range, HPBW, ...)."""


@dataclass(frozen=True)
class Position:
    """Planar position in meters (z fixed at 0)."""

    x: float
    y: float

    def distance_to(self, other: "Position") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass(frozen=True)
class Hpbw:
    """Half-power beamwidths in the azimuth and elevation planes, degrees."""

    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        for v in (self.azimuth_deg, self.elevation_deg):
            if not (0.0 < v <= 360.0):
                raise InvalidParameterError(f"HPBW {v} outside (0, 360]")


def directivity_from_hpbw(h: Hpbw) -> float:
    """Peak directivity of a single-main-lobe planar array: 32400 / (az * el)."""
    if h.azimuth_deg <= 0 or h.elevation_deg <= 0:
        raise InvalidParameterError("HPBW values must be positive")
    return 32_400.0 / (h.azimuth_deg * h.elevation_deg)


def gain_from_directivity(e_cd: float, directivity: float) -> float:
    """Gain = radiation efficiency times directivity (both dimensionless)."""
    if not (0.0 <= e_cd <= 1.0):
        raise InvalidParameterError(f"radiation efficiency {e_cd} outside [0, 1]")
    return e_cd * directivity


def db(value: float) -> float:
    return 10.0 * math.log10(value)


def wavelength_m(freq_hz: float) -> float:
    if freq_hz <= 0:
        raise InvalidParameterError("frequency must be positive")
    return SPEED_OF_LIGHT_M_S / freq_hz


def watts_to_dbm(p_watts: float) -> float:
    if p_watts <= 0:
        raise InvalidParameterError("power must be positive")
    return 10.0 * math.log10(p_watts * 1000.0)


def friis_received_power(
    pt_watts: float,
    gt_db: float,
    gr_db: float,
    freq_hz: float,
    range_m: float,
) -> float:
    """Received power in dBm over a free-space path.

    Pr/Pt = Gr * Gt * (lambda / 4 pi R)^2, no fading or noise terms.
    """
    if range_m <= 0:
        raise InvalidParameterError("range must be positive (no near-field model)")
    lam = wavelength_m(freq_hz)
    path_db = 20.0 * math.log10(4.0 * math.pi * range_m / lam)
    return watts_to_dbm(pt_watts) + gt_db + gr_db - path_db


def direction_between(a: Position, b: Position) -> tuple[float, float]:
    """(azimuth degrees in [0, 360) with east = 0, Euclidean range in meters)."""
    if a.x == b.x and a.y == b.y:
        raise InvalidParameterError("coincident positions have no direction")
    azimuth = math.degrees(math.atan2(b.y - a.y, b.x - a.x)) % 360.0
    return azimuth, a.distance_to(b)


def angle_difference_deg(a: float, b: float) -> float:
    """Smallest absolute angular separation of two azimuths, in [0, 180]."""
    d = (a - b) % 360.0
    return min(d, 360.0 - d)


@dataclass
class GainTable:
    """Polar x azimuth grid of gain values in dB.

    The grid covers polar [0, 180] and azimuth [0, 360) at a fixed step; every
    cell holds either the main-lobe or the side-lobe value.  Lookups snap to
    the nearest grid point (round half up), no interpolation.
    """

    polar_step_deg: float = DEFAULT_GRID_STEP_DEG
    azimuth_step_deg: float = DEFAULT_GRID_STEP_DEG
    main_lobe_db: float = DEFAULT_MAIN_LOBE_DB
    side_lobe_db: float = DEFAULT_SIDE_LOBE_DB
    # cells[i][j] = gain at polar i*polar_step, azimuth j*azimuth_step
    cells: list[list[float]] = field(default_factory=list)

    @property
    def polar_rows(self) -> int:
        return int(round(180.0 / self.polar_step_deg)) + 1

    @property
    def azimuth_cols(self) -> int:
        return int(round(360.0 / self.azimuth_step_deg))

    @classmethod
    def single_lobe(
        cls,
        boresight_azimuth_deg: float,
        hpbw: Hpbw,
        main_lobe_db: float = DEFAULT_MAIN_LOBE_DB,
        side_lobe_db: float = DEFAULT_SIDE_LOBE_DB,
        step_deg: float = DEFAULT_GRID_STEP_DEG,
    ) -> "GainTable":
        """Main lobe centered on the boresight azimuth at polar 90 degrees."""
        table = cls(step_deg, step_deg, main_lobe_db, side_lobe_db)
        half_az = hpbw.azimuth_deg / 2.0
        half_el = hpbw.elevation_deg / 2.0
        cells = []
        for i in range(table.polar_rows):
            polar = i * step_deg
            row = []
            for j in range(table.azimuth_cols):
                azimuth = j * step_deg
                in_lobe = (
                    abs(polar - 90.0) <= half_el
                    and angle_difference_deg(azimuth, boresight_azimuth_deg) <= half_az
                )
                row.append(main_lobe_db if in_lobe else side_lobe_db)
            cells.append(row)
        table.cells = cells
        return table

    def lookup(self, polar_deg: float, azimuth_deg: float) -> float:
        """Gain of the grid cell nearest the query angles (round half up)."""
        polar = min(max(polar_deg, 0.0), 180.0)
        azimuth = azimuth_deg % 360.0
        i = int(math.floor(polar / self.polar_step_deg + 0.5))
        j = int(math.floor(azimuth / self.azimuth_step_deg + 0.5)) % self.azimuth_cols
        i = min(i, self.polar_rows - 1)
        return self.cells[i][j]

    def to_ascii(self) -> str:
        """Fixed-header, tab-separated matrix with azimuth columns and polar rows."""
        lines = [GAIN_TABLE_HEADER]
        cols = [j * self.azimuth_step_deg for j in range(self.azimuth_cols)]
        lines.append("\t" + "\t".join(format_angle(c) for c in cols))
        for i in range(self.polar_rows):
            polar = i * self.polar_step_deg
            row = self.cells[i]
            lines.append(
                format_angle(polar) + "\t" + "\t".join(format_gain(v) for v in row)
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ascii(cls, text: str) -> "GainTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != GAIN_TABLE_HEADER:
            raise ValueError("missing or malformed gain-table header line")
        col_labels = [float(tok) for tok in lines[1].split("\t") if tok != ""]
        rows = []
        row_labels = []
        for ln in lines[2:]:
            toks = ln.split("\t")
            row_labels.append(float(toks[0]))
            rows.append([float(t) for t in toks[1:]])
        if len(col_labels) < 2 or len(row_labels) < 2:
            raise ValueError("gain table too small")
        az_step = col_labels[1] - col_labels[0]
        polar_step = row_labels[1] - row_labels[0]
        values = sorted({v for row in rows for v in row})
        if len(values) > 2:
            raise ValueError("gain table must be two-valued (main lobe + floor)")
        side = values[0]
        main = values[-1]
        table = cls(polar_step, az_step, main, side, rows)
        if table.polar_rows != len(rows) or any(
            len(r) != table.azimuth_cols for r in rows
        ):
            raise ValueError("gain table does not cover polar 0..180, azimuth 0..360")
        return table


def format_angle(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def format_gain(v: float) -> str:
    return repr(v) if v != int(v) else str(int(v))


@dataclass
class Beam:
    """One switched beam: an index, a boresight and its gain pattern."""

    index: int
    boresight_azimuth_deg: float
    hpbw: Hpbw
    gain: GainTable

    def gain_toward(self, azimuth_deg: float) -> float:
        # Planar scenarios: evaluate at the polar row of the main lobe.
        return self.gain.lookup(90.0, azimuth_deg)

    def main_lobe_contains(self, azimuth_deg: float) -> bool:
        return (
            angle_difference_deg(azimuth_deg, self.boresight_azimuth_deg)
            <= self.hpbw.azimuth_deg / 2.0
        )


def make_beams(
    boresights_deg: Sequence[float],
    hpbw: Hpbw,
    main_lobe_db: float = DEFAULT_MAIN_LOBE_DB,
    side_lobe_db: float = DEFAULT_SIDE_LOBE_DB,
) -> list[Beam]:
    return [
        Beam(i, b % 360.0, hpbw, GainTable.single_lobe(b % 360.0, hpbw, main_lobe_db, side_lobe_db))
        for i, b in enumerate(boresights_deg)
    ]


def validate_non_overlapping(beams: Sequence[Beam]) -> None:
    """Main lobes of one node must be pairwise disjoint."""
    for i, a in enumerate(beams):
        for b in beams[i + 1:]:
            sep = angle_difference_deg(a.boresight_azimuth_deg, b.boresight_azimuth_deg)
            if sep < (a.hpbw.azimuth_deg + b.hpbw.azimuth_deg) / 2.0:
                raise InvalidParameterError(
                    f"beams {a.index} and {b.index} have overlapping main lobes "
                    f"(separation {sep:.2f} deg)"
                )


def beam_for_arrival(beams: Sequence[Beam], doa_azimuth_deg: float) -> Optional[int]:
    """Index of the unique beam whose main lobe contains the DoA, else None."""
    for beam in beams:
        if beam.main_lobe_contains(doa_azimuth_deg):
            return beam.index
    return None
