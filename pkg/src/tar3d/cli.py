"""Single executable for the whole pipeline.

Subcommands: dataset, train-vqvae, export-tokens, train-gpt, generate, eval,
inspect-codebook. Exit codes: 0 ok, 2 config error, 3 missing prerequisite,
4 pairing error, 5 corrupt file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import seqcodec
from .backend.checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, gpt_config_from, load_config, vqvae_config_from

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PREREQ = 3
EXIT_PAIRING = 4
EXIT_CORRUPT = 5


def _dataset_path(data_arg: str) -> Path:
    p = Path(data_arg)
    return p if p.suffix == ".t3d" else p / "shapes.t3d"


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        print(f"error: missing prerequisite {what}: {path}", file=sys.stderr)
        raise SystemExit(EXIT_PREREQ)
    return Path(path)


# -- subcommands -----------------------------------------------------------------


def cmd_dataset(cfg: RunConfig, args) -> int:
    from .shapes.dataset import build_dataset
    out = Path(args.out)
    cfg.write_resolved(out)
    manifest = build_dataset(
        out / "shapes.t3d",
        classes=cfg.get_int("data.classes"),
        per_class=cfg.get_int("data.per_class"),
        n_points=cfg.get_int("data.points"),
        n_uniform=cfg.get_int("data.uniform"),
        n_near=cfg.get_int("data.near"),
        sigma=cfg.get_float("data.sigma"),
        seed=cfg.get_int("seed"),
    )
    print(f"wrote {manifest['count']} records to {out / 'shapes.t3d'}")
    return EXIT_OK


def cmd_train_vqvae(cfg: RunConfig, args) -> int:
    from .shapes.dataset import Dataset
    from .vqvae.train import train_vqvae
    ds = Dataset(_require(_dataset_path(args.data), "dataset"))
    out = Path(args.out)
    cfg.write_resolved(out)
    report = train_vqvae(
        ds, vqvae_config_from(cfg), out,
        epochs=cfg.get_int("train1.epochs"),
        batch_size=cfg.get_int("train1.batch"),
        lr=cfg.get_float("train1.lr"),
        weight_decay=cfg.get_float("train1.weight_decay"),
        beta=cfg.get_float("vqvae.beta"),
        lambda_rec=cfg.get_float("vqvae.lambda_rec"),
        lambda_cb=cfg.get_float("vqvae.lambda_cb"),
        queries_uniform=cfg.get_int("train1.queries_uniform"),
        queries_near=cfg.get_int("train1.queries_near"),
        sigma=cfg.get_float("data.sigma"),
        holdout_per_class=cfg.get_int("train1.holdout_per_class"),
        seed=cfg.get_int("seed"),
        time_budget_s=cfg.get_float("train1.time_budget"),
        log_every=args.log_every,
    )
    print(f"stage-1 done: epochs={report.epochs_run} rec={report.final_rec:.4f} "
          f"cb={report.final_cb:.4f} usage={report.usage_fraction:.2f} "
          f"held_out_rec={report.held_out_rec:.4f} -> {report.checkpoint}")
    return EXIT_OK


def cmd_export_tokens(cfg: RunConfig, args) -> int:
    from .shapes.dataset import Dataset
    from .vqvae.model import TriplaneVQVAE
    ds = Dataset(_require(_dataset_path(args.data), "dataset"))
    ckpt = _require(Path(args.vqvae), "stage-1 checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    try:
        model, _ = TriplaneVQVAE.load(ckpt)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    seqs = np.empty((len(ds), model.cfg.n_tokens), dtype=np.int64)
    classes = np.empty(len(ds), dtype=np.int64)
    for i in range(len(ds)):
        rec = ds[i]
        z = model.encode(rec.cloud)
        _, idx = model.quantize(z)
        seqs[i] = seqcodec.build_sequence(idx, k_bound=model.cfg.codebook_size).tokens
        classes[i] = rec.spec.class_id
    seqcodec.write_tokens(out / "tokens.t3s", seqs, model.cfg.h, model.cfg.w,
                          model.cfg.codebook_size)
    seqcodec.write_class_ids(out / "classes.t3c", classes)
    print(f"exported {len(ds)} sequences of length {seqs.shape[1]} to {out / 'tokens.t3s'}")
    return EXIT_OK


def cmd_train_gpt(cfg: RunConfig, args) -> int:
    from .gpt.model import read_embedding_file
    from .gpt.train import train_gpt
    tokens_path = _require(Path(args.tokens), "token file (run export-tokens first)")
    out = Path(args.out)
    cfg.write_resolved(out)
    sequences, h, w, k_codes = seqcodec.read_tokens(tokens_path)
    if args.embedding_file:
        rows = read_embedding_file(args.embedding_file)
        if rows.shape[0] != len(sequences):
            print(f"error: {rows.shape[0]} embeddings for {len(sequences)} sequences",
                  file=sys.stderr)
            return EXIT_CONFIG
        cond_source = rows[:, None, :]
        num_classes = 1
    else:
        cls_path = tokens_path.parent / "classes.t3c"
        classes = seqcodec.read_class_ids(_require(cls_path, "class-id sidecar"))
        cond_source = classes
        num_classes = int(classes.max()) + 1 if args.per_sequence_class else \
            max(int(classes.max()) + 1, cfg.get_int("data.classes"))
        if args.per_sequence_class:
            cond_source = np.arange(len(sequences))
            num_classes = len(sequences)
    gcfg = gpt_config_from(cfg, k_codes, h, w, num_classes)
    report = train_gpt(
        sequences, cond_source, gcfg, out,
        epochs=cfg.get_int("train2.epochs"),
        batch_size=cfg.get_int("train2.batch"),
        lr=cfg.get_float("train2.lr"),
        weight_decay=cfg.get_float("train2.weight_decay"),
        holdout=cfg.get_int("train2.holdout"),
        seed=cfg.get_int("seed"),
        time_budget_s=cfg.get_float("train2.time_budget"),
        target_loss=cfg.get_float("train2.target_loss") or None,
        log_every=args.log_every,
    )
    print(f"stage-2 done: epochs={report.epochs_run} loss={report.final_loss:.4f} "
          f"held_out_ppl={report.held_out_ppl:.2f} -> {report.checkpoint}")
    return EXIT_OK


def _decode_grid(model, tokens_row: np.ndarray, resolution: int):
    from .metrics.occupancy import occupancy_grid
    seq = seqcodec.TokenSequence(tokens=tokens_row, h=model.cfg.h, w=model.cfg.w)
    idx = seqcodec.unbuild_sequence(seq)
    z_q = model.lookup_codes(idx)
    return occupancy_grid(lambda z, pts: model.decode_occupancy(z, pts), z_q, resolution)


def cmd_generate(cfg: RunConfig, args) -> int:
    from .gpt.model import GPT, Condition, read_embedding_file
    from .gpt.sample import GPTSampler
    from .metrics.marching import marching_cubes
    from .metrics.mesh import save_obj, save_ply
    from .vqvae.model import TriplaneVQVAE
    vq_path = _require(Path(args.vqvae), "stage-1 checkpoint")
    gpt_path = _require(Path(args.gpt), "stage-2 checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    try:
        vq, _ = TriplaneVQVAE.load(vq_path)
        gpt = GPT.load(gpt_path)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT

    if args.embedding_file:
        rows = read_embedding_file(args.embedding_file)
        conds = [Condition.external(rows[i % len(rows)][None]) for i in range(args.n)]
        cond_desc = [f"external:{i % len(rows)}" for i in range(args.n)]
        ref_ids = [-1] * args.n
    else:
        class_id = args.class_id
        if class_id is None or not 0 <= class_id < gpt.cfg.num_classes:
            print(f"error: --class must be in [0, {gpt.cfg.num_classes})", file=sys.stderr)
            return EXIT_CONFIG
        conds = [Condition.for_class(class_id)] * args.n
        cond_desc = [f"class:{class_id}"] * args.n
        ref_ids = [class_id] * args.n
    if args.ref_ids:
        ref_ids = [int(x) for x in args.ref_ids.split(",")]
        if len(ref_ids) != args.n:
            print(f"error: --ref-ids needs {args.n} entries", file=sys.stderr)
            return EXIT_CONFIG

    sampler = GPTSampler(gpt)
    seed0 = cfg.get_int("seed")
    resolution = cfg.get_int("sample.resolution")
    seqs = np.empty((args.n, gpt.cfg.seq_len), dtype=np.int64)
    manifest_lines = []
    for i, cond in enumerate(conds):
        sample_seed = seed0 + i
        tokens, _ = sampler.sample(cond,
                                   cfg_scale=cfg.get_float("sample.cfg_scale"),
                                   temperature=cfg.get_float("sample.temperature"),
                                   top_k=cfg.get_int("sample.top_k"),
                                   seed=sample_seed)
        seqs[i] = tokens
        grid = _decode_grid(vq, tokens, resolution)
        mesh = marching_cubes(grid.values, 0.5)
        name = f"sample_{i:03d}.{args.mesh_format}"
        (save_ply if args.mesh_format == "ply" else save_obj)(out / name, mesh)
        manifest_lines.append(f"sample_{i:03d} seed={sample_seed} cond={cond_desc[i]} "
                              f"ref_id={ref_ids[i]} mesh={name}\n")
    seqcodec.write_tokens(out / "tokens.t3s", seqs, gpt.cfg.h, gpt.cfg.w,
                          gpt.cfg.codebook_size)
    (out / "generate.manifest").write_text(
        f"vqvae={vq_path}\ngpt={gpt_path}\ncount={args.n}\n" + "".join(manifest_lines))
    print(f"generated {args.n} meshes in {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from .metrics.mesh import load_obj, load_ply
    from .metrics.occupancy import analytic_occupancy_grid, iou
    from .metrics.points import chamfer, fscore, sample_mesh_surface
    from .shapes.dataset import Dataset
    from .shapes.sampling import sample_surface
    from .vqvae.model import TriplaneVQVAE

    ds = Dataset(_require(_dataset_path(args.data), "reference dataset"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    n_samples = cfg.get_int("eval.samples")
    tau = cfg.get_float("eval.tau")
    resolution = cfg.get_int("eval.resolution")
    seed = cfg.get_int("seed")

    pred = Path(args.pred)
    rows = []
    unpaired = []
    if pred.is_file() or pred.suffix == ".t3d" or (pred / "shapes.t3d").exists():
        # self-evaluation: references against themselves
        ref_ds = Dataset(_dataset_path(str(pred)))
        if len(ref_ds) != len(ds):
            unpaired = list(range(min(len(ref_ds), len(ds)), max(len(ref_ds), len(ds))))
        for i in range(min(len(ref_ds), len(ds))):
            pts = sample_surface(ds.spec(i), n_samples, np.random.SeedSequence((seed, i))).points
            grid = analytic_occupancy_grid(ds.spec(i), resolution)
            rows.append((f"{i:03d}", chamfer(pts, pts), fscore(pts, pts, tau), iou(grid, grid)))
    else:
        manifest_path = _require(pred / "generate.manifest", "generate manifest")
        header, entries = {}, []
        for line in manifest_path.read_text().splitlines():
            if "=" in line and " " not in line:
                k, v = line.split("=", 1)
                header[k] = v
            elif line.startswith("sample_"):
                fields = dict(kv.split("=", 1) for kv in line.split()[1:])
                fields["id"] = line.split()[0]
                entries.append(fields)
        vq_path = Path(args.vqvae) if args.vqvae else Path(header.get("vqvae", ""))
        try:
            vq, _ = TriplaneVQVAE.load(_require(vq_path, "stage-1 checkpoint"))
        except CheckpointError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CORRUPT
        seqs, _, _, _ = seqcodec.read_tokens(pred / "tokens.t3s")
        for i, ent in enumerate(entries):
            ref_id = int(ent.get("ref_id", -1))
            if not 0 <= ref_id < len(ds):
                unpaired.append(ent["id"])
                continue
            mesh_path = pred / ent["mesh"]
            mesh = load_ply(mesh_path) if mesh_path.suffix == ".ply" else load_obj(mesh_path)
            spec = ds.spec(ref_id)
            ref_pts = sample_surface(spec, n_samples, np.random.SeedSequence((seed, ref_id))).points
            if mesh.is_empty():
                rows.append((ent["id"], float("inf"), 0.0, 0.0))
                continue
            pred_pts = sample_mesh_surface(mesh, n_samples, np.random.SeedSequence((seed, 1, i)))
            grid_pred = _decode_grid(vq, seqs[i], resolution)
            grid_ref = analytic_occupancy_grid(spec, resolution)
            rows.append((ent["id"], chamfer(pred_pts, ref_pts),
                         fscore(pred_pts, ref_pts, tau), iou(grid_pred, grid_ref)))

    csv_path = out / "metrics.csv"
    with open(csv_path, "w") as fh:
        fh.write("sample_id,chamfer,fscore,iou\n")
        for sid, ch, fs, io in rows:
            fh.write(f"{sid},{ch!r},{fs!r},{io!r}\n")
        if rows:
            means = [float(np.mean([r[i] for r in rows])) for i in (1, 2, 3)]
            fh.write(f"mean,{means[0]!r},{means[1]!r},{means[2]!r}\n")
    print(f"wrote {csv_path} ({len(rows)} rows + aggregate)")
    if unpaired:
        print(f"unpaired ids: {unpaired}", file=sys.stderr)
        return EXIT_PAIRING
    return EXIT_OK


def cmd_inspect_codebook(cfg: RunConfig, args) -> int:
    try:
        arrays = load_checkpoint(_require(Path(args.vqvae), "stage-1 checkpoint"))
    except CheckpointError as e:
        print(f"error: corrupt checkpoint: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    if "quant.codebook" not in arrays:
        print("error: checkpoint has no codebook", file=sys.stderr)
        return EXIT_CORRUPT
    codebook = arrays["quant.codebook"]
    norms = np.linalg.norm(codebook, axis=1)
    print(f"codebook: {codebook.shape[0]} entries x {codebook.shape[1]} channels")
    print(f"entry norms: min {norms.min():.4f} mean {norms.mean():.4f} max {norms.max():.4f}")
    usage = arrays.get("quant.usage")
    if usage is None or usage.sum() == 0:
        print("usage: no usage data")
        return EXIT_OK
    p = usage / usage.sum()
    nz = p[p > 0]
    perplexity = float(np.exp(-(nz * np.log(nz)).sum()))
    used = int((usage > 0).sum())
    print(f"usage fraction: {used / len(usage):.4f} ({used}/{len(usage)} entries)")
    print(f"usage perplexity: {perplexity:.2f}")
    print(f"dead entries: {len(usage) - used}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--preset", default="desk", choices=["desk", "paper"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tar3d", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate the procedural shape dataset")
    _add_common(p)

    p = sub.add_parser("train-vqvae", help="train the stage-1 triplane VQ-VAE")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("export-tokens", help="encode the dataset to token sequences")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--vqvae", required=True, help="stage-1 checkpoint")

    p = sub.add_parser("train-gpt", help="train the stage-2 autoregressive model")
    _add_common(p)
    p.add_argument("--tokens", required=True, help="token file from export-tokens")
    p.add_argument("--embedding-file", default=None,
                   help="per-sequence external condition embeddings")
    p.add_argument("--per-sequence-class", action="store_true",
                   help="condition on the sequence index (overfit/memorization runs)")
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("generate", help="sample shapes and extract meshes")
    _add_common(p)
    p.add_argument("--vqvae", required=True)
    p.add_argument("--gpt", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--class", dest="class_id", type=int, default=None)
    p.add_argument("--embedding-file", default=None)
    p.add_argument("--cfg-scale", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--ref-ids", default=None, help="comma list pairing samples to dataset records")
    p.add_argument("--mesh-format", default="obj", choices=["obj", "ply"])

    p = sub.add_parser("eval", help="score predictions against the dataset")
    _add_common(p)
    p.add_argument("--pred", required=True, help="generate output dir or dataset for self-eval")
    p.add_argument("--data", required=True)
    p.add_argument("--vqvae", default=None)
    p.add_argument("--resolution", type=int, default=None)

    p = sub.add_parser("inspect-codebook", help="codebook usage and norm statistics")
    _add_common(p)
    p.add_argument("--vqvae", required=True)
    return ap


_FLAG_KEYS = {
    "seed": "seed",
    "cfg_scale": "sample.cfg_scale",
    "temperature": "sample.temperature",
    "top_k": "sample.top_k",
    "resolution": "sample.resolution",
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for attr, key in _FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if args.command == "eval" and args.resolution is not None:
        overrides.pop("sample.resolution", None)
        overrides["eval.resolution"] = args.resolution
    try:
        cfg = load_config(args.preset, args.config, overrides)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    handlers = {
        "dataset": cmd_dataset,
        "train-vqvae": cmd_train_vqvae,
        "export-tokens": cmd_export_tokens,
        "train-gpt": cmd_train_gpt,
        "generate": cmd_generate,
        "eval": cmd_eval,
        "inspect-codebook": cmd_inspect_codebook,
    }
    try:
        return handlers[args.command](cfg, args)
    except SystemExit as e:
        return int(e.code)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())
