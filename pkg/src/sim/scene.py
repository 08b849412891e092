"""
車室シーン: 直方体の車室、3列×2席のスピーチゾーン、ゾーンごとのラインアレイ

座標系: x = 車幅方向, y = 前後方向（y = 0 がフロントガラス側）, z = 高さ。
各ゾーンのアレイはゾーン前端に x 軸方向に並び、着座した話者に対して broadside になる。
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ContractError, SignalValidationError
from src.schemas import SPEED_OF_SOUND, DatasetSpec

_ARRAY_DEPTH = 0.08   # アレイのゾーン前端からの距離 [m]
_HEIGHT_FRACTION = 0.72


@dataclass(frozen=True, eq=False)
class CabinScene:
    width: float
    length: float
    height: float
    rt60: float
    zones: np.ndarray          # [M, 2, 3] (lower corner, upper corner)
    arrays: np.ndarray         # [M, P, 3]
    sources: np.ndarray        # [N, 3]
    occupied: Tuple[int, ...]  # zone index of each source
    spacing: float = 0.02
    speed_of_sound: float = SPEED_OF_SOUND
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("width", "length", "height"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise SignalValidationError(f"cabin {name} must be positive, got {value}")
        if self.rt60 < 0.0:
            raise SignalValidationError(f"rt60 must be >= 0, got {self.rt60}")
        zones = np.asarray(self.zones, dtype=np.float64)
        arrays = np.asarray(self.arrays, dtype=np.float64)
        sources = np.asarray(self.sources, dtype=np.float64).reshape(-1, 3)
        if arrays.ndim != 3 or arrays.shape[0] != zones.shape[0] or arrays.shape[2] != 3:
            raise SignalValidationError("arrays must be [zones x mics x 3]")
        if len(self.occupied) != sources.shape[0]:
            raise ContractError("exactly one source per occupied zone is required")
        if len(set(self.occupied)) != len(self.occupied):
            raise ContractError("a zone can host only one source")
        if sources.shape[0] > zones.shape[0]:
            raise ContractError(f"{sources.shape[0]} sources exceed {zones.shape[0]} zones")
        if any(not 0 <= z < zones.shape[0] for z in self.occupied):
            raise ContractError("occupied zone index out of range")
        self.check_inside(arrays.reshape(-1, 3), "microphone")
        self.check_inside(sources, "source")
        object.__setattr__(self, "zones", zones)
        object.__setattr__(self, "arrays", arrays)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "occupied", tuple(int(z) for z in self.occupied))

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width, self.length, self.height])

    @property
    def n_zones(self) -> int:
        return int(self.zones.shape[0])

    @property
    def mics_per_zone(self) -> int:
        return int(self.arrays.shape[1])

    @property
    def mic_positions(self) -> np.ndarray:
        """[M·P, 3] in zone-major order (the raw_mics channel order)."""
        return self.arrays.reshape(-1, 3)

    def check_inside(self, points: np.ndarray, what: str) -> None:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inside = np.all((points > 0.0) & (points < self.dims[None, :]), axis=1)
        if not np.all(inside):
            bad = points[~inside][0]
            raise SignalValidationError(
                f"{what} at {bad.tolist()} is not strictly inside the {self.dims.tolist()} m cabin",
                detail={"position": bad.tolist(), "dims": self.dims.tolist()},
            )

    def with_sources(self, sources: np.ndarray, occupied: Sequence[int]) -> "CabinScene":
        return CabinScene(self.width, self.length, self.height, self.rt60, self.zones, self.arrays,
                          np.asarray(sources), tuple(occupied), self.spacing, self.speed_of_sound, self.seed)


def zone_grid(width: float, length: float, height: float, zones: int = 6) -> np.ndarray:
    """列優先で 2席 × ceil(M/2)列 のゾーン箱 [M, 2, 3]"""
    cols = 2 if zones > 1 else 1
    rows = -(-zones // cols)
    boxes = np.zeros((zones, 2, 3))
    for z in range(zones):
        row, col = divmod(z, cols)
        boxes[z, 0] = [col * width / cols, row * length / rows, 0.0]
        boxes[z, 1] = [(col + 1) * width / cols, (row + 1) * length / rows, height]
    return boxes


def zone_array(box: np.ndarray, mics: int, spacing: float) -> np.ndarray:
    """ゾーン前端・中央に x 方向のラインアレイを置く"""
    lo, hi = box
    centre_x = 0.5 * (lo[0] + hi[0])
    y = lo[1] + _ARRAY_DEPTH
    z = lo[2] + _HEIGHT_FRACTION * (hi[2] - lo[2])
    offsets = (np.arange(mics) - 0.5 * (mics - 1)) * spacing
    return np.stack([centre_x + offsets, np.full(mics, y), np.full(mics, z)], axis=1)


def seat_position(box: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """着座位置（ゾーン内で固定、頭部の高さ付近）"""
    lo, hi = box
    size = hi - lo
    x = lo[0] + size[0] * (0.5 + rng.uniform(-0.15, 0.15))
    y = lo[1] + size[1] * rng.uniform(0.45, 0.75)
    z = lo[2] + size[2] * rng.uniform(0.65, 0.8)
    return np.array([x, y, z])


def build_scene(width: float, length: float, height: float, rt60: float, occupied: Sequence[int], *,
                zones: int = 6, mics: int = 4, spacing: float = 0.02, seed: int = 0,
                speed_of_sound: float = SPEED_OF_SOUND, rng: Optional[np.random.Generator] = None) -> CabinScene:
    rng = rng if rng is not None else np.random.default_rng(seed)
    boxes = zone_grid(width, length, height, zones)
    arrays = np.stack([zone_array(box, mics, spacing) for box in boxes])
    sources = np.stack([seat_position(boxes[z], rng) for z in occupied]) if occupied else np.zeros((0, 3))
    return CabinScene(width, length, height, rt60, boxes, arrays, sources, tuple(occupied),
                      spacing, speed_of_sound, seed)


def sample_scene(spec: DatasetSpec, rng: np.random.Generator, seed: int = 0) -> CabinScene:
    """寸法・RT60・乗員数・着座ゾーンを一様分布から引く"""
    cabin = spec.cabin
    width = rng.uniform(*cabin.width)
    length = rng.uniform(*cabin.length)
    height = rng.uniform(*cabin.height)
    rt60 = rng.uniform(*spec.rt60_range)
    lo, hi = spec.occupancy
    n_sources = int(rng.integers(lo, hi + 1))
    occupied: List[int] = sorted(int(z) for z in rng.choice(spec.layout.zones, size=n_sources, replace=False))
    return build_scene(width, length, height, rt60, occupied, zones=spec.layout.zones,
                       mics=spec.layout.mics_per_zone, spacing=spec.spacing, seed=seed,
                       speed_of_sound=spec.speed_of_sound, rng=rng)


def random_positions(scene: CabinScene, count: int, rng: np.random.Generator, margin: float = 0.05) -> np.ndarray:
    """車室内の一様ランダム位置（雑音源用）"""
    dims = scene.dims
    return margin + rng.uniform(size=(count, 3)) * (dims - 2 * margin)[None, :]
