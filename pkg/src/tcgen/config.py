"""Generator configuration and its validation."""
from __future__ import annotations

from dataclasses import dataclass, replace

MAX_THREADS = 1024
LAYOUT_CODES = {"rr": ("row", "row"), "rc": ("row", "col"), "cr": ("col", "row"), "cc": ("col", "col")}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    block: tuple[int, int, int] = (128, 128, 64)
    warp: tuple[int, int, int] = (64, 64, 32)
    macro: int = 16
    split_k: int | None = None
    layouts: tuple[str, str] | None = None  # overrides matmul operand layouts (A, B)
    prefetch: bool = True

    @property
    def warps_m(self) -> int:
        return self.block[0] // self.warp[0]

    @property
    def warps_n(self) -> int:
        return self.block[1] // self.warp[1]

    @property
    def sk(self) -> int:
        return self.split_k if self.split_k is not None else self.block[2] // self.warp[2]

    @property
    def threads(self) -> int:
        return self.warps_m * self.warps_n * self.sk * 32

    def validated(self) -> "GenConfig":
        b, w = self.block, self.warp
        if len(b) != 3 or len(w) != 3 or min(b + w) <= 0:
            raise ConfigError(f"tiles must be three positive integers: block {b}, warp {w}")
        if self.macro not in (16, 32):
            raise ConfigError(f"macro shape must be 16 or 32, got {self.macro}")
        for d, name in ((0, "m"), (1, "n")):
            if w[d] % self.macro:
                raise ConfigError(f"warp tile {name}={w[d]} is not a multiple of the macro-MMA size {self.macro}")
            if b[d] % w[d]:
                raise ConfigError(f"block tile {name}={b[d]} is not a multiple of warp tile {w[d]}")
        if w[2] % 8:
            raise ConfigError(f"warp tile k={w[2]} is not a multiple of the macro-MMA k size 8")
        if b[2] % w[2]:
            raise ConfigError(f"block tile k={b[2]} is not a multiple of warp tile k={w[2]}")
        sk = self.sk
        if sk not in (1, 2, 4):
            raise ConfigError(f"split-K must be 1, 2 or 4, got {sk}")
        if b[2] != sk * w[2]:
            raise ConfigError(f"block tile k={b[2]} must equal split-K {sk} x warp tile k={w[2]}")
        if self.layouts is not None and any(x not in ("row", "col") for x in self.layouts):
            raise ConfigError(f"layouts must be row or col: {self.layouts}")
        cfg = replace(self, split_k=sk)
        if cfg.threads > MAX_THREADS:
            raise ConfigError(f"{cfg.threads} threads per block exceeds {MAX_THREADS}")
        return cfg

    def check_sizes(self, M: int, N: int, K: int) -> None:
        b = self.block
        for name, v, t in (("M", M, b[0]), ("N", N, b[1]), ("K", K, b[2])):
            if v <= 0 or v % t:
                raise ConfigError(f"{name}={v} is not a multiple of the block tile {t}; "
                                  "problem sizes must be multiples of the block tile sizes")

    def tag(self) -> str:
        lay = "".join(x[0] for x in self.layouts) if self.layouts else "dag"
        return (f"b{'x'.join(map(str, self.block))}_w{'x'.join(map(str, self.warp))}"
                f"_m{self.macro}_sk{self.sk}_{lay}{'_pf' if self.prefetch else ''}")


REFERENCE = GenConfig((128, 128, 64), (64, 64, 32), 16, 2, ("row", "col"), True)


def parse_triple(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"expected m,n,k but got {text!r}")
    try:
        return tuple(int(p) for p in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise ConfigError(f"expected integers in {text!r}") from exc
