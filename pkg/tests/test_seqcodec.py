import numpy as np
import pytest

from tar3d import seqcodec as sq

rng = np.random.default_rng(7)


class TestOrdering:
    def test_single_cell_plane_order(self):
        grid = np.array([[[10]], [[20]], [[30]]])  # XY, YZ, XZ
        seq = sq.build_sequence(grid)
        assert seq.tokens.tolist() == [10, 20, 30]

    def test_step_formula(self):
        # token t = 3*(i*w + j) + k: t=3 is plane 0 at cell (0, 1) for h=w=2
        grid = rng.integers(0, 99, size=(3, 2, 2))
        seq = sq.build_sequence(grid)
        assert seq.tokens[3] == grid[0, 0, 1]
        for t in range(12):
            i, j, k = sq.position_of(t, 2)
            assert seq.tokens[t] == grid[k, i, j]

    def test_roundtrip_random_grids(self):
        for _ in range(50):
            h = int(rng.integers(1, 9))
            grid = rng.integers(0, 512, size=(3, h, h))
            back = sq.unbuild_sequence(sq.build_sequence(grid))
            assert np.array_equal(back, grid)

    def test_build_unbuild_identity_on_sequences(self):
        tokens = rng.integers(0, 64, size=3 * 4 * 4)
        seq = sq.TokenSequence(tokens=tokens, h=4, w=4)
        assert np.array_equal(sq.build_sequence(sq.unbuild_sequence(seq)).tokens, tokens)

    def test_zero_sequence(self):
        seq = sq.TokenSequence(tokens=np.zeros(12, dtype=np.int64), h=2, w=2)
        assert np.array_equal(sq.unbuild_sequence(seq), np.zeros((3, 2, 2)))

    def test_exhaustive_bijection_vs_triple_loop(self):
        h = w = 4
        grid = np.arange(3 * h * w).reshape(3, h, w)
        seq = sq.build_sequence(grid)
        expected = np.empty(3 * h * w, dtype=np.int64)
        for i in range(h):
            for j in range(w):
                for k in range(3):
                    expected[3 * (i * w + j) + k] = grid[k, i, j]
        assert np.array_equal(seq.tokens, expected)

    def test_rejections(self):
        with pytest.raises(ValueError):
            sq.build_sequence(np.zeros((2, 2, 2), dtype=int))
        with pytest.raises(ValueError, match="range"):
            sq.build_sequence(np.full((3, 2, 2), 9), k_bound=8)
        with pytest.raises(ValueError, match="length"):
            sq.unbuild_sequence(sq.TokenSequence(tokens=np.zeros(10, dtype=int), h=2, w=2))


class TestTriPE:
    def test_origin_identity(self):
        table = sq.tripe_table(4, 4, 16)
        assert np.allclose(table.angles[0], 0.0)
        v = rng.normal(size=(1, 16))
        out = sq.apply_rope(v, table.angles[:1])
        assert np.allclose(out, v)

    def test_adjacent_positions_share_2d_part(self):
        h = w = 4
        head_dim = 16
        table = sq.tripe_table(h, w, head_dim)
        # t and t+1 share (i, j); their angle difference is exactly one plane step
        one_plane_step = sq.tripe_angles(0, 0, 1, head_dim)
        for t in (0, 3, 7, 30):
            diff = table.angles[t + 1] - table.angles[t]
            assert np.allclose(diff, one_plane_step)

    def test_closed_form_recomputation(self):
        head_dim = 8
        base = 10000.0
        q_axis = head_dim // 4
        w2d = base ** (-2.0 * np.arange(q_axis) / (head_dim / 2))
        w1d = base ** (-2.0 * np.arange(head_dim // 2) / head_dim)
        for (i, j, k) in [(0, 0, 0), (2, 5, 1), (7, 1, 2)]:
            expected = np.concatenate([i * w2d, j * w2d]) + k * w1d
            got = sq.tripe_angles(i, j, k, head_dim, base)
            assert np.allclose(got, expected)

    def test_head_dim_divisibility(self):
        with pytest.raises(ValueError):
            sq.tripe_angles(0, 0, 0, 6)

    def test_norm_preservation(self):
        table = sq.tripe_table(4, 4, 32)
        v = rng.normal(size=(48, 32))
        out = sq.apply_rope(v, table.angles)
        assert np.abs(np.linalg.norm(out, axis=1) - np.linalg.norm(v, axis=1)).max() < 1e-5

    def test_relative_position_invariance(self):
        # attention logits after rope depend only on (di, dj, dk)
        h = w = 8
        head_dim = 16
        q = rng.normal(size=(head_dim,))
        k = rng.normal(size=(head_dim,))
        i1, j1, k1 = 1, 2, 0
        i2, j2, k2 = 3, 5, 2
        base_logit = float(
            sq.apply_rope(q[None], sq.tripe_angles(i1, j1, k1, head_dim)[None])[0]
            @ sq.apply_rope(k[None], sq.tripe_angles(i2, j2, k2, head_dim)[None])[0])
        for di, dj in [(1, 0), (0, 3), (4, 2)]:
            shifted = float(
                sq.apply_rope(q[None], sq.tripe_angles(i1 + di, j1 + dj, k1, head_dim)[None])[0]
                @ sq.apply_rope(k[None], sq.tripe_angles(i2 + di, j2 + dj, k2, head_dim)[None])[0])
            assert abs(shifted - base_logit) < 1e-5

    def test_planes_get_distinct_encodings(self):
        head_dim = 16
        q = rng.normal(size=(head_dim,))
        k = rng.normal(size=(head_dim,))
        logits = []
        for kk in range(3):
            rq = sq.apply_rope(q[None], sq.tripe_angles(2, 2, 0, head_dim)[None])[0]
            rk = sq.apply_rope(k[None], sq.tripe_angles(2, 2, kk, head_dim)[None])[0]
            logits.append(float(rq @ rk))
        assert abs(logits[0] - logits[1]) > 1e-6
        assert abs(logits[0] - logits[2]) > 1e-6

    def test_apply_rope_linear(self):
        table = sq.tripe_table(2, 2, 8)
        a = rng.normal(size=(12, 8))
        b = rng.normal(size=(12, 8))
        lhs = sq.apply_rope(2.5 * a + b, table.angles)
        rhs = 2.5 * sq.apply_rope(a, table.angles) + sq.apply_rope(b, table.angles)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_prefix_positions_zero(self):
        table = sq.tripe_table(2, 2, 8)
        ang = sq.angles_with_prefix(table, 5, prefix=2)
        assert np.allclose(ang[:2], 0.0)
        assert np.allclose(ang[2:], table.angles[:3])

    def test_rope1d_differs_from_tripe(self):
        t1 = sq.tripe_table(4, 4, 16)
        t2 = sq.rope1d_table(4, 4, 16)
        assert not np.allclose(t1.angles, t2.angles)


class TestTokenFile:
    def test_roundtrip(self, tmp_path):
        seqs = rng.integers(0, 512, size=(5, 3 * 4 * 4))
        path = tmp_path / "t.t3s"
        sq.write_tokens(path, seqs, 4, 4, 512)
        back, h, w, k = sq.read_tokens(path)
        assert (h, w, k) == (4, 4, 512)
        assert np.array_equal(back, seqs)

    def test_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            sq.write_tokens(tmp_path / "t.t3s", np.full((1, 48), 513), 4, 4, 512)

    def test_rejects_bad_length(self, tmp_path):
        with pytest.raises(ValueError):
            sq.write_tokens(tmp_path / "t.t3s", np.zeros((1, 40), dtype=int), 4, 4, 512)

    def test_class_ids_roundtrip(self, tmp_path):
        ids = np.array([0, 1, 2, 1, 0])
        sq.write_class_ids(tmp_path / "c.t3c", ids)
        assert np.array_equal(sq.read_class_ids(tmp_path / "c.t3c"), ids)
