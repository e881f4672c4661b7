"""Run configuration: desk/paper presets, key=value config files, flag overrides.

Every tunable constant in the pipeline lives here under a flat dotted key.
Unknown keys are rejected; every command writes its fully-resolved config next
to its outputs so any run can be reproduced from that file plus the seed.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Bad key or value in a config source."""


DESK = {
    "seed": 0,
    # dataset generation
    "data.classes": 3,
    "data.per_class": 72,
    "data.points": 4096,
    "data.uniform": 2048,
    "data.near": 2048,
    "data.sigma": 0.05,
    # stage-1 model
    "vqvae.h": 8,
    "vqvae.w": 8,
    "vqvae.d_embed": 256,
    "vqvae.d_latent": 8,
    "vqvae.d_code": 8,
    "vqvae.codebook": 512,
    "vqvae.self_layers": 4,
    "vqvae.interact_layers": 2,
    "vqvae.heads": 4,
    "vqvae.fourier_bands": 4,
    "vqvae.d_dec": 128,
    "vqvae.dec_heads": 4,
    "vqvae.mlp_hidden": 128,
    "vqvae.upsample": 4,
    "vqvae.mlp_ratio": 2,
    "vqvae.beta": 0.25,
    "vqvae.lambda_rec": 1.0,
    "vqvae.lambda_cb": 0.1,
    # stage-1 training
    "train1.epochs": 26,
    "train1.batch": 8,
    "train1.lr": 3e-4,
    "train1.weight_decay": 0.0,
    "train1.queries_uniform": 2048,
    "train1.queries_near": 2048,
    "train1.holdout_per_class": 4,
    "train1.time_budget": 1800.0,
    # stage-2 model
    "gpt.layers": 6,
    "gpt.heads": 8,
    "gpt.dim": 256,
    "gpt.cond_dropout": 0.1,
    "gpt.pos": "tripe",
    "gpt.base": 10000.0,
    "gpt.mlp_ratio": 4,
    # stage-2 training
    "train2.epochs": 400,
    "train2.batch": 8,
    "train2.lr": 3e-4,
    "train2.weight_decay": 0.0,
    "train2.holdout": 0,
    "train2.target_loss": 0.0,
    "train2.time_budget": 600.0,
    # sampling / generation
    "sample.cfg_scale": 3.0,
    "sample.temperature": 1.0,
    "sample.top_k": 64,
    "sample.resolution": 64,
    # evaluation
    "eval.samples": 4096,
    "eval.tau": 0.02,
    "eval.resolution": 32,
}

# documented paper-scale constants; training these on CPU is not practical
PAPER_OVERRIDES = {
    "data.points": 81920,
    "data.uniform": 20480,
    "data.near": 20480,
    "vqvae.h": 32,
    "vqvae.w": 32,
    "vqvae.d_embed": 768,
    "vqvae.d_latent": 16,
    "vqvae.codebook": 16384,
    "vqvae.self_layers": 8,
    "vqvae.interact_layers": 6,
    "vqvae.heads": 12,
    "vqvae.fourier_bands": 8,
    "vqvae.d_dec": 256,
    "vqvae.dec_heads": 8,
    "vqvae.mlp_hidden": 256,
    "vqvae.upsample": 8,
    "vqvae.mlp_ratio": 4,
    "train1.lr": 1e-4,
    "gpt.layers": 24,
    "gpt.heads": 16,
    "gpt.dim": 1024,
    "train2.lr": 1e-4,
    "sample.cfg_scale": 7.5,
    "sample.resolution": 128,
}

PRESETS = {"desk": {}, "paper": PAPER_OVERRIDES}


class RunConfig:
    def __init__(self, values: dict):
        self._values = dict(values)

    def __getitem__(self, key: str):
        return self._values[key]

    def get_int(self, key: str) -> int:
        return int(self._values[key])

    def get_float(self, key: str) -> float:
        return float(self._values[key])

    def get_str(self, key: str) -> str:
        return str(self._values[key])

    def items(self):
        return sorted(self._values.items())

    def dump(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def write_resolved(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved.cfg").write_text(self.dump())


def _coerce(key: str, raw, template) -> object:
    if isinstance(template, bool):
        return str(raw).lower() in ("1", "true", "yes")
    if isinstance(template, int):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"key {key!r}: expected int, got {raw!r}") from e
    if isinstance(template, float):
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"key {key!r}: expected float, got {raw!r}") from e
    return str(raw)


def parse_config_file(path) -> dict:
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(preset: str = "desk", config_path=None, overrides: dict | None = None) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (choose from {sorted(PRESETS)})")
    values = dict(DESK)
    values.update(PRESETS[preset])
    for source in (parse_config_file(config_path) if config_path else {}, overrides or {}):
        for k, v in source.items():
            if k not in values:
                raise ConfigError(f"unknown config key {k!r}")
            values[k] = _coerce(k, v, DESK[k])
    return RunConfig(values)


def vqvae_config_from(cfg: RunConfig):
    from .vqvae.model import VQVAEConfig
    return VQVAEConfig(
        n_points=cfg.get_int("data.points"),
        h=cfg.get_int("vqvae.h"),
        w=cfg.get_int("vqvae.w"),
        d_embed=cfg.get_int("vqvae.d_embed"),
        d_latent=cfg.get_int("vqvae.d_latent"),
        d_code=cfg.get_int("vqvae.d_code"),
        codebook_size=cfg.get_int("vqvae.codebook"),
        self_layers=cfg.get_int("vqvae.self_layers"),
        interact_layers=cfg.get_int("vqvae.interact_layers"),
        heads=cfg.get_int("vqvae.heads"),
        fourier_bands=cfg.get_int("vqvae.fourier_bands"),
        d_dec=cfg.get_int("vqvae.d_dec"),
        dec_heads=cfg.get_int("vqvae.dec_heads"),
        mlp_hidden=cfg.get_int("vqvae.mlp_hidden"),
        upsample=cfg.get_int("vqvae.upsample"),
        mlp_ratio=cfg.get_int("vqvae.mlp_ratio"),
    )


def gpt_config_from(cfg: RunConfig, codebook_size: int, h: int, w: int, num_classes: int):
    from .gpt.model import GPTConfig
    return GPTConfig(
        n_layers=cfg.get_int("gpt.layers"),
        n_heads=cfg.get_int("gpt.heads"),
        d_model=cfg.get_int("gpt.dim"),
        h=h,
        w=w,
        codebook_size=codebook_size,
        num_classes=num_classes,
        cond_dropout=cfg.get_float("gpt.cond_dropout"),
        pos_mode=cfg.get_str("gpt.pos"),
        rope_base=cfg.get_float("gpt.base"),
        mlp_ratio=cfg.get_int("gpt.mlp_ratio"),
    )
