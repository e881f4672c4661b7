"""End-to-end CLI contract tests on a miniature configuration."""

import hashlib

import numpy as np
import pytest

from tar3d import seqcodec
from tar3d.cli import main

TINY = """
data.classes=3
data.per_class=4
data.points=192
data.uniform=128
data.near=128
vqvae.d_embed=48
vqvae.codebook=32
vqvae.self_layers=1
vqvae.interact_layers=1
vqvae.heads=2
vqvae.d_dec=24
vqvae.dec_heads=2
vqvae.mlp_hidden=24
vqvae.fourier_bands=2
vqvae.upsample=2
train1.epochs=2
train1.batch=4
train1.queries_uniform=64
train1.queries_near=64
train1.holdout_per_class=1
gpt.layers=1
gpt.heads=2
gpt.dim=32
train2.epochs=2
train2.batch=4
sample.resolution=16
sample.top_k=1
eval.samples=256
eval.resolution=16
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """dataset -> stage 1 -> tokens -> stage 2, shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    c = str(cfg)
    assert main(["dataset", "--config", c, "--out", str(root / "data")]) == 0
    assert main(["train-vqvae", "--config", c, "--data", str(root / "data"),
                 "--out", str(root / "s1")]) == 0
    assert main(["export-tokens", "--config", c, "--data", str(root / "data"),
                 "--vqvae", str(root / "s1/vqvae.ckpt"), "--out", str(root / "tok")]) == 0
    assert main(["train-gpt", "--config", c, "--tokens", str(root / "tok/tokens.t3s"),
                 "--out", str(root / "s2")]) == 0
    return root, c


def test_dataset_manifest_and_determinism(workspace, tmp_path):
    root, c = workspace
    manifest = (root / "data/shapes.manifest").read_text()
    assert "classes=3" in manifest and "count=12" in manifest
    assert main(["dataset", "--config", c, "--out", str(tmp_path / "again")]) == 0
    h1 = hashlib.sha256((root / "data/shapes.t3d").read_bytes()).hexdigest()
    h2 = hashlib.sha256((tmp_path / "again/shapes.t3d").read_bytes()).hexdigest()
    assert h1 == h2


def test_resolved_config_written(workspace):
    root, _ = workspace
    resolved = (root / "data/resolved.cfg").read_text()
    assert "data.classes=3" in resolved
    assert "seed=0" in resolved


def test_unknown_config_key_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus.key=1\n")
    assert main(["dataset", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_stage_order_enforced(workspace, tmp_path):
    root, c = workspace
    assert main(["train-gpt", "--config", c, "--tokens", str(tmp_path / "none.t3s"),
                 "--out", str(tmp_path / "o")]) == 3
    assert main(["export-tokens", "--config", c, "--data", str(root / "data"),
                 "--vqvae", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "o")]) == 3
    assert main(["generate", "--config", c, "--vqvae", str(tmp_path / "none.ckpt"),
                 "--gpt", str(root / "s2/gpt.ckpt"), "--out", str(tmp_path / "o")]) == 3


def test_exported_tokens_shape_and_decode(workspace):
    root, _ = workspace
    seqs, h, w, k = seqcodec.read_tokens(root / "tok/tokens.t3s")
    assert seqs.shape == (12, 3 * 8 * 8)
    assert (h, w, k) == (8, 8, 32)
    for row in seqs:
        grid = seqcodec.unbuild_sequence(seqcodec.TokenSequence(tokens=row, h=h, w=w))
        assert grid.min() >= 0 and grid.max() < k
    classes = seqcodec.read_class_ids(root / "tok/classes.t3c")
    assert classes.tolist() == [0] * 4 + [1] * 4 + [2] * 4


def test_generate_outputs_and_determinism(workspace, tmp_path):
    root, c = workspace
    out1 = tmp_path / "g1"
    out2 = tmp_path / "g2"
    for out in (out1, out2):
        assert main(["generate", "--config", c, "--vqvae", str(root / "s1/vqvae.ckpt"),
                     "--gpt", str(root / "s2/gpt.ckpt"), "--out", str(out),
                     "--n", "4", "--class", "1"]) == 0
    meshes = sorted(p.name for p in out1.glob("sample_*.obj"))
    assert len(meshes) == 4
    assert (out1 / "generate.manifest").exists()
    assert (out1 / "tokens.t3s").read_bytes() == (out2 / "tokens.t3s").read_bytes()
    manifest = (out1 / "generate.manifest").read_text()
    assert "seed=" in manifest and "cond=class:1" in manifest


def test_generate_bad_class_exit_2(workspace, tmp_path):
    root, c = workspace
    assert main(["generate", "--config", c, "--vqvae", str(root / "s1/vqvae.ckpt"),
                 "--gpt", str(root / "s2/gpt.ckpt"), "--out", str(tmp_path / "o"),
                 "--n", "1", "--class", "99"]) == 2


def test_eval_self_identity_and_format(workspace, tmp_path):
    root, c = workspace
    out = tmp_path / "ev"
    assert main(["eval", "--config", c, "--pred", str(root / "data"),
                 "--data", str(root / "data"), "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "sample_id,chamfer,fscore,iou"
    assert len(lines) == 1 + 12 + 1          # header + rows + aggregate
    for line in lines[1:-1]:
        _, ch, fs, io_ = line.split(",")
        assert float(ch) == 0.0 and float(fs) == 1.0 and float(io_) == 1.0
    agg = lines[-1].split(",")
    assert agg[0] == "mean"
    rows = [list(map(float, ln.split(",")[1:])) for ln in lines[1:-1]]
    means = np.mean(rows, axis=0)
    assert np.allclose(means, [float(x) for x in agg[1:]], atol=1e-9)


def test_eval_generate_dir_and_determinism(workspace, tmp_path):
    root, c = workspace
    gen = tmp_path / "gen"
    assert main(["generate", "--config", c, "--vqvae", str(root / "s1/vqvae.ckpt"),
                 "--gpt", str(root / "s2/gpt.ckpt"), "--out", str(gen),
                 "--n", "2", "--class", "0", "--ref-ids", "0,1"]) == 0
    ev1 = tmp_path / "ev1"
    ev2 = tmp_path / "ev2"
    for ev in (ev1, ev2):
        assert main(["eval", "--config", c, "--pred", str(gen),
                     "--data", str(root / "data"), "--out", str(ev)]) == 0
    assert (ev1 / "metrics.csv").read_bytes() == (ev2 / "metrics.csv").read_bytes()


def test_eval_unpaired_exit_4(workspace, tmp_path):
    root, c = workspace
    gen = tmp_path / "gen"
    assert main(["generate", "--config", c, "--vqvae", str(root / "s1/vqvae.ckpt"),
                 "--gpt", str(root / "s2/gpt.ckpt"), "--out", str(gen),
                 "--n", "1", "--class", "0", "--ref-ids", "99"]) == 0
    assert main(["eval", "--config", c, "--pred", str(gen),
                 "--data", str(root / "data"), "--out", str(tmp_path / "ev")]) == 4


def test_inspect_codebook(workspace, capsys):
    root, c = workspace
    assert main(["inspect-codebook", "--config", c, "--vqvae", str(root / "s1/vqvae.ckpt")]) == 0
    out = capsys.readouterr().out
    assert "usage fraction" in out and "perplexity" in out


def test_inspect_fresh_codebook_reports_no_usage(workspace, tmp_path, capsys):
    from tar3d.vqvae.model import TriplaneVQVAE, VQVAEConfig
    m = TriplaneVQVAE(VQVAEConfig(n_points=64, h=2, w=2, d_embed=16, d_latent=4, d_code=4,
                                  codebook_size=8, self_layers=1, interact_layers=1,
                                  heads=2, fourier_bands=1, d_dec=8, dec_heads=2,
                                  mlp_hidden=8, upsample=2, mlp_ratio=1), seed=0)
    m.save(tmp_path / "fresh.ckpt", extra={"quant.usage": np.zeros(8, dtype=np.int64)})
    assert main(["inspect-codebook", "--vqvae", str(tmp_path / "fresh.ckpt")]) == 0
    assert "no usage data" in capsys.readouterr().out


def test_inspect_corrupt_exit_5(tmp_path):
    bad = tmp_path / "c.ckpt"
    bad.write_bytes(b"garbage header")
    assert main(["inspect-codebook", "--vqvae", str(bad)]) == 5


def test_flags_override_config(workspace, tmp_path, capsys):
    root, c = workspace
    out = tmp_path / "g"
    assert main(["generate", "--config", c, "--vqvae", str(root / "s1/vqvae.ckpt"),
                 "--gpt", str(root / "s2/gpt.ckpt"), "--out", str(out),
                 "--n", "1", "--class", "0", "--cfg-scale", "5.5", "--seed", "123"]) == 0
    resolved = (out / "resolved.cfg").read_text()
    assert "sample.cfg_scale=5.5" in resolved
    assert "seed=123" in resolved
    assert "seed=123" in (out / "generate.manifest").read_text()
