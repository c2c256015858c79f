import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vqslp.codebook.artifact import CodebookArtifact, check_version
from vqslp.codebook.config import CodebookConfig, ReplacementPolicy
from vqslp.codebook.losses import codebook_loss, pool_embeddings, supcon_loss, total_loss
from vqslp.codebook.model import Codebook, CodebookModel, counter_track, nearest_entry, nsvq, sinusoid_table
from vqslp.codebook.replacement import EncoderBuffer, replace_dead_entries
from vqslp.codebook.train import _reset_adam_rows, extract_windows, fit_codebook, window_label
from vqslp.errors import ArtifactMismatchError, DataError, NumericalError
from vqslp.pose_data import NormalizationParams, SkeletonSpec


def brute_nearest(z, entries):
    out = []
    for row in z:
        best, best_d = 0, math.inf
        for k, e in enumerate(entries):
            d = sum((a - b) ** 2 for a, b in zip(row, e))
            if d < best_d:
                best, best_d = k, d
        out.append(best)
    return out


# --- quantization -----------------------------------------------------------


def test_nearest_entry_matches_scan():
    g = torch.Generator().manual_seed(0)
    for _ in range(50):
        z = torch.randn(7, 5, generator=g, dtype=torch.float64)
        e = torch.randn(9, 5, generator=g, dtype=torch.float64)
        idx, dist = nearest_entry(z, e)
        assert idx.tolist() == brute_nearest(z.tolist(), e.tolist())
        np.testing.assert_allclose(dist, ((z - e[idx]) ** 2).sum(1))


def test_nearest_entry_ties_lowest_index():
    e = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    idx, _ = nearest_entry(torch.tensor([[1.0, 0.0], [0.5, 0.5]]), e)
    assert idx.tolist() == [0, 0]


def test_nearest_entry_chunking():
    g = torch.Generator().manual_seed(1)
    z, e = torch.randn(600, 4, generator=g), torch.randn(30, 4, generator=g)
    assert torch.equal(nearest_entry(z, e, chunk=7)[0], nearest_entry(z, e, chunk=1000)[0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8), st.integers(1, 12))
def test_nsvq_magnitude_identity(seed, batch, n):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, 3, 4, generator=g, dtype=torch.float64)
    e = torch.randn(n, 12, generator=g, dtype=torch.float64)
    z_hat, idx = nsvq(z, e, generator=g)
    lhs = torch.linalg.vector_norm((z_hat - z).reshape(batch, -1), dim=1)
    rhs = torch.linalg.vector_norm(z.reshape(batch, -1) - e[idx], dim=1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-12)


def test_nsvq_zero_noise_is_resampled():
    z = torch.ones(2, 4, dtype=torch.float64)
    e = torch.zeros(3, 4, dtype=torch.float64)
    z_hat, _ = nsvq(z, e, noise=torch.zeros(2, 4, dtype=torch.float64), generator=torch.Generator().manual_seed(0))
    np.testing.assert_allclose(torch.linalg.vector_norm(z_hat - z, dim=1), [2.0, 2.0])


def test_nsvq_direction_is_isotropic():
    # for fixed z the substituted error direction is uniform on the sphere
    d, trials = 6, 20000
    z = torch.randn(1, d, dtype=torch.float64).expand(trials, d).contiguous()
    e = torch.zeros(1, d, dtype=torch.float64)
    z_hat, _ = nsvq(z, e, generator=torch.Generator().manual_seed(3))
    u = (z_hat - z) / torch.linalg.vector_norm(z_hat - z, dim=1, keepdim=True)
    assert torch.abs(u.mean(0)).max() < 4 / math.sqrt(trials)
    cov = (u.T @ u) / trials
    np.testing.assert_allclose(cov, torch.eye(d, dtype=torch.float64) / d, atol=0.01)


def test_nsvq_gradient_reaches_selected_entry_only():
    z = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    e = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)
    z_hat, idx = nsvq(z, e, generator=torch.Generator().manual_seed(0))
    z_hat.sum().backward()
    used = set(idx.tolist())
    for k in range(5):
        assert (e.grad[k].abs().sum() > 0) == (k in used)


# --- losses -----------------------------------------------------------------


def test_codebook_loss_hand():
    pred = torch.zeros(1, 2, 2, 1, dtype=torch.float64)
    true = torch.tensor([[[[1.0], [3.0]], [[0.0], [2.0]]]], dtype=torch.float64)
    pc = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
    tc = torch.tensor([0.5, 1.0], dtype=torch.float64)
    # frame 0: (1 + 9)/2 = 5, frame 1: (0 + 4)/2 = 2; counters 0 and 0.25
    expect = ((5 + 0.0) + (2 + 2.0 * 0.25)) / 2
    assert float(codebook_loss(pred, true, pc, tc, alpha=2.0)) == pytest.approx(expect)


def supcon_loop(f, labels, tau):
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    B = len(f)
    total = 0.0
    for i in range(B):
        pos = [p for p in range(B) if p != i and labels[p] == labels[i]]
        if not pos:
            continue
        denom = sum(math.exp(f[i] @ f[a] / tau) for a in range(B) if a != i)
        total += -sum(math.log(math.exp(f[i] @ f[p] / tau) / denom) for p in pos) / len(pos)
    return total / B


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 9), st.sampled_from([0.07, 0.5, 1.0]))
def test_supcon_matches_double_loop(seed, B, tau):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(B, 5))
    labels = rng.integers(0, 3, size=B)
    got = float(supcon_loss(torch.from_numpy(f), torch.from_numpy(labels), tau))
    assert got == pytest.approx(supcon_loop(f, labels, tau), rel=1e-9, abs=1e-12)


def test_supcon_no_positives_is_zero():
    f = torch.randn(4, 3, dtype=torch.float64)
    assert float(supcon_loss(f, torch.arange(4), 0.1)) == 0.0


def test_pool_embeddings():
    z = torch.arange(12.0).reshape(1, 3, 4)
    np.testing.assert_allclose(pool_embeddings(z), [[4.0, 5.0, 6.0, 7.0]])


def test_total_loss_zero_iff_perfect():
    x = torch.rand(2, 3, 4)
    c = counter_track(3).expand(2, 3)
    cb = codebook_loss(x, x.clone(), c, counter_track(3), 1.0)
    assert float(total_loss(cb, None, 0.1)) == 0.0
    assert float(total_loss(cb, torch.tensor(0.0), 0.1)) == 0.0
    assert float(total_loss(cb, torch.tensor(0.3), 0.1)) > 0.0
    assert float(total_loss(codebook_loss(x + 0.1, x, c, counter_track(3), 1.0), None, 0.0)) > 0.0
    with pytest.raises(ValueError):
        total_loss(cb, None, -1.0)


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
def test_counter_weight_scales_counter_term(alpha):
    x = torch.rand(3, 4, 5)
    pc = torch.rand(3, 4)
    tc = counter_track(4)
    pose_only = codebook_loss(x + 0.2, x, tc.expand(3, 4), tc, alpha)
    both = codebook_loss(x + 0.2, x, pc, tc, alpha)
    np.testing.assert_allclose(float(both - pose_only), alpha * float(((pc - tc) ** 2).mean()), rtol=1e-5)


def test_counter_track():
    c = counter_track(5)
    assert torch.all(c[1:] > c[:-1]) and float(c[-1]) == 1.0 and float(c[0]) == pytest.approx(0.2)


def test_sinusoid_table_values():
    t = sinusoid_table(3, 4, dtype=torch.float64)
    assert t[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert float(t[1, 0]) == pytest.approx(math.sin(1.0))
    assert float(t[1, 2]) == pytest.approx(math.sin(1.0 / 100.0))


# --- finite-difference gradient check ------------------------------------------


def tiny_setup():
    torch.manual_seed(0)
    cfg = CodebookConfig(vocab_size=4, window=2, embed=8, layers=1, heads=2, ff_size=16, dropout=0.0,
                         counter_weight=1.0, contrastive_weight=0.1, temperature=0.07)
    J, D = 3, 2
    model = CodebookModel(J * D, cfg).double()
    x = torch.rand(6, 2, J * D, dtype=torch.float64)
    model.set_pose_stats(x)
    noise = torch.randn(6, 2 * 8, dtype=torch.float64)
    labels = torch.tensor([0, 0, 1, 1, 2, 0])
    # put entries near the encoder outputs so every entry is selected by someone
    with torch.no_grad():
        z = model.encode(x).reshape(6, -1)
        model.codebook.entries.copy_(z[:4] + 0.05 * torch.randn(4, 16, dtype=torch.float64))

    def loss_fn():
        out = model(x, noise)
        cb = codebook_loss(out["poses"], x, out["counters"], model.counters, cfg.counter_weight)
        con = supcon_loss(pool_embeddings(out["z"]), labels, cfg.temperature)
        return total_loss(cb, con, cfg.contrastive_weight)

    return model, loss_fn


def test_gradient_check_every_parameter():
    model, loss_fn = tiny_setup()
    model.zero_grad()
    loss_fn().backward()
    h = 1e-6
    worst = 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone()
            flat = p.view(-1)
            for k in range(flat.numel()):
                old = float(flat[k])
                flat[k] = old + h
                up = float(loss_fn())
                flat[k] = old - h
                down = float(loss_fn())
                flat[k] = old
                numeric = (up - down) / (2 * h)
                a = float(analytic.view(-1)[k])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
                worst = max(worst, err)
                assert abs(a - numeric) <= 1e-4 * max(abs(a), abs(numeric)) + 1e-8, (name, k, a, numeric)
    assert worst < 1e-4


# --- replacement ------------------------------------------------------------


def test_replacement_schedule():
    p = ReplacementPolicy()
    assert [p.interval_at(e) for e in (1, 50, 51, 100, 101)] == [1, 1, 10, 10, 100]
    assert p.due(1) and p.due(50) and not p.due(55) and p.due(60)
    assert not ReplacementPolicy(enabled=False).due(1)


def test_policy_validation():
    with pytest.raises(ValueError):
        ReplacementPolicy(mode="bogus").validate(10)
    with pytest.raises(ValueError):
        ReplacementPolicy(dead_threshold=0.5, active_threshold=0.1).validate(10)
    with pytest.raises(ValueError):
        ReplacementPolicy(dead_threshold=-0.1).validate(10)
    # the default active threshold never undercuts the dead one
    assert ReplacementPolicy(dead_threshold=0.5).resolved_active_threshold(10) == 0.5
    assert ReplacementPolicy(dead_threshold=0.001).resolved_active_threshold(10) == 0.1


def make_codebook(usage):
    cb = Codebook(len(usage), 3)
    cb.usage.copy_(torch.tensor(usage))
    return cb


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=12), st.sampled_from(["active-plus-noise", "encoder-sample"]),
       st.integers(0, 1000))
def test_replacement_invariants(usage, mode, seed):
    cb = make_codebook(usage)
    before = cb.entries.detach().clone()
    policy = ReplacementPolicy(mode=mode, dead_threshold=0.05)
    buf = torch.randn(20, 3)
    frac = cb.usage_fraction().numpy()
    report = replace_dead_entries(cb, policy, buf, np.random.default_rng(seed))
    assert cb.entries.shape == before.shape
    changed = {d for d, _, _ in report.replaced}
    for k in range(len(usage)):
        if frac[k] >= policy.dead_threshold:
            assert k not in changed
            assert torch.equal(cb.entries[k], before[k])
    assert int(cb.usage.sum()) == 0


def test_active_plus_noise_copies_active_entry():
    cb = make_codebook([100, 0, 0, 50])
    before = cb.entries.detach().clone()
    report = replace_dead_entries(cb, ReplacementPolicy(mode="active-plus-noise"), None, np.random.default_rng(0))
    assert sorted(d for d, _, _ in report.replaced) == [1, 2]
    scale = 0.01 * float(torch.linalg.vector_norm(before, dim=1).mean())
    for d, kind, src in report.replaced:
        assert kind == "entry" and src in (0, 3)
        assert float(torch.abs(cb.entries[d].detach() - before[src]).max()) < 6 * scale


def test_encoder_sample_uses_buffer_rows():
    cb = make_codebook([10, 0])
    buf = torch.arange(12.0).reshape(4, 3)
    report = replace_dead_entries(cb, ReplacementPolicy(), buf, np.random.default_rng(0))
    (d, kind, src), = report.replaced
    assert d == 1 and kind == "z"
    assert torch.equal(cb.entries[1].detach(), buf[src])


def test_replacement_skipped_without_usage(caplog):
    cb = make_codebook([0, 0, 0])
    report = replace_dead_entries(cb, ReplacementPolicy(), torch.randn(4, 3), np.random.default_rng(0))
    assert report.skipped and not report.replaced
    assert "skipped" in caplog.text


def test_encoder_buffer_ring():
    buf = EncoderBuffer(4, 1)
    buf.push(torch.tensor([[1.0], [2.0], [3.0]]))
    buf.push(torch.tensor([[4.0], [5.0]]))
    assert sorted(buf.contents().view(-1).tolist()) == [2.0, 3.0, 4.0, 5.0]
    buf.push(torch.arange(10.0).view(-1, 1))
    assert buf.contents().view(-1).tolist() == [6.0, 7.0, 8.0, 9.0]


def test_adam_rows_reset():
    p = torch.nn.Parameter(torch.randn(3, 2))
    opt = torch.optim.Adam([p], lr=0.1)
    p.sum().backward()
    opt.step()
    _reset_adam_rows(opt, p, [1])
    st_ = opt.state[p]
    assert float(st_["exp_avg"][1].abs().sum()) == 0.0
    assert float(st_["exp_avg"][0].abs().sum()) > 0.0


# --- windows and training -------------------------------------------------------


def test_window_label_majority_then_onset():
    assert window_label(np.array([1, 1, 2, 2])) == 1
    assert window_label(np.array([2, 1, 1, 3])) == 1
    assert window_label(np.array([3, 2, 2, 3])) == 3


def test_extract_windows():
    seq = np.arange(10 * 2 * 1, dtype=np.float64).reshape(10, 2, 1)
    X, y = extract_windows([seq], 4, frame_labels=[np.arange(10)])
    assert X.shape == (2, 4, 2) and y.tolist() == [0, 4]
    X1, _ = extract_windows([seq], 4, stride=1)
    assert X1.shape == (7, 4, 2)
    with pytest.raises(DataError):
        extract_windows([seq[:3]], 4)


def tiny_windows(n=96, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.random((4, 2, 6))
    which = rng.integers(0, 4, size=n)
    return (base[which] + 0.01 * rng.random((n, 2, 6))).astype(np.float32), which


def tiny_cfg(**kw):
    base = dict(vocab_size=8, window=2, embed=16, layers=1, heads=2, ff_size=16, dropout=0.0, lr=3e-3,
                batch_size=16, epochs=4)
    base.update(kw)
    return CodebookConfig(**base)


def test_training_is_deterministic():
    X, _ = tiny_windows()
    _, h1 = fit_codebook(X, tiny_cfg())
    _, h2 = fit_codebook(X, tiny_cfg())
    assert h1 == h2


def test_non_finite_loss_aborts_with_snapshot():
    X, _ = tiny_windows()
    X[3, 0, 0] = np.nan
    with pytest.raises(NumericalError) as exc:
        fit_codebook(X, tiny_cfg())
    assert exc.value.snapshot["epoch"] == 1
    assert "lr" in exc.value.snapshot


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
def test_counter_weight_sweep_trains(alpha):
    X, _ = tiny_windows()
    model, hist = fit_codebook(X, tiny_cfg(counter_weight=alpha, epochs=6))
    assert all(math.isfinite(r["loss"]) for r in hist[:-1])
    assert hist[-2]["loss"] < hist[0]["loss"]
    with torch.no_grad():
        _, counters = model.decode(model.codebook.entries)
    # counters are regressed toward (u+1)/U_cb for every code
    assert float(((counters - model.counters) ** 2).mean()) < 0.1


def test_contrastive_term_logged():
    X, y = tiny_windows()
    _, hist = fit_codebook(X, tiny_cfg(), labels=y)
    assert hist[0]["supcon_loss"] > 0


def test_replacement_never_runs_on_last_epoch():
    X, _ = tiny_windows()
    _, hist = fit_codebook(X, tiny_cfg(vocab_size=32, epochs=3))
    assert hist[2]["replaced"] == 0


# --- artifact -----------------------------------------------------------------


def tiny_artifact():
    X, _ = tiny_windows()
    cfg = tiny_cfg()
    model, hist = fit_codebook(X, cfg)
    sk = SkeletonSpec(joint_count=3, dims=2, layout=(("body", 3),))
    norm = NormalizationParams(np.zeros(2), np.ones(2))
    return CodebookArtifact(cfg, sk, norm, model, cfg.seed, hist)


def test_artifact_round_trip(tmp_path):
    art = tiny_artifact()
    art.save(tmp_path / "cb")
    back = CodebookArtifact.load(tmp_path / "cb")
    assert back.fingerprint == art.fingerprint
    assert back.normalization == art.normalization
    np.testing.assert_array_equal(back.token_pose_table(), art.token_pose_table())
    w = np.random.default_rng(0).random((5, 2, 3, 2))
    np.testing.assert_array_equal(back.quantize(back.encode_windows(w)), art.quantize(art.encode_windows(w)))


def test_artifact_rejects_unknown_major(tmp_path):
    art = tiny_artifact()
    art.save(tmp_path / "cb")
    (tmp_path / "cb" / "VERSION").write_text("vqslp-codebook 2.0\n")
    with pytest.raises(ArtifactMismatchError):
        CodebookArtifact.load(tmp_path / "cb")
    assert check_version("vqslp-codebook 1.7", "vqslp-codebook", "1.0") == "1.7"
    with pytest.raises(ArtifactMismatchError):
        check_version("vqslp-translator 1.0", "vqslp-codebook", "1.0")


def test_token_table_matches_decoder():
    art = tiny_artifact()
    table = art.token_pose_table()
    assert table.shape == (8, 2, 3, 2)
    np.testing.assert_array_equal(table[5], np.clip(art.decode_tokens([5])[0], 0, 1))


# --- worked examples ----------------------------------------------------------


def test_codebook_loss_scalar_pose_example():
    pred = torch.tensor([[[1.0], [1.0]]], dtype=torch.float64)
    true = torch.tensor([[[0.0], [1.0]]], dtype=torch.float64)
    pc = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    tc = torch.tensor([0.5, 1.0], dtype=torch.float64)
    assert float(codebook_loss(pred, true, pc, tc, alpha=2.0)) == pytest.approx(0.75)
    # alpha = 0 leaves the pose term alone
    assert float(codebook_loss(pred, true, pc, tc, alpha=0.0)) == pytest.approx(0.5)


def test_quantize_small_examples():
    e = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
    assert nearest_entry(torch.tensor([[0.2, 0.1]]), e)[0].tolist() == [0]
    g = torch.Generator().manual_seed(0)
    entries = torch.randn(6, 4, generator=g)
    idx, dist = nearest_entry(entries[3:4].clone(), entries)
    assert idx.tolist() == [3] and float(dist[0]) == 0.0


def test_nsvq_exact_when_on_entry():
    e = torch.randn(5, 6, dtype=torch.float64)
    z = e[[2, 4]].clone()
    z_hat, idx = nsvq(z, e, generator=torch.Generator().manual_seed(0))
    assert idx.tolist() == [2, 4]
    assert torch.equal(z_hat, z)


def test_supcon_small_examples():
    f = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
    assert float(supcon_loss(f, torch.tensor([0, 0]), 1.0)) == pytest.approx(0.0, abs=1e-12)
    same = torch.ones(4, 3, dtype=torch.float64)
    v = float(supcon_loss(same, torch.tensor([0, 1, 0, 1]), 0.07))
    assert math.isfinite(v) and v == pytest.approx(math.log(3))


def test_supcon_crafted_batch_of_four():
    f = np.array([[1.0, 0.1], [0.9, -0.2], [-0.3, 1.0], [0.1, 0.8]])
    labels = np.array([0, 0, 1, 1])
    got = float(supcon_loss(torch.from_numpy(f), torch.from_numpy(labels), 0.5))
    assert got == pytest.approx(supcon_loop(f, labels, 0.5), abs=1e-6)


def test_total_loss_examples():
    assert float(total_loss(torch.tensor(0.5), torch.tensor(0.5), 1.0)) == 1.0
    assert float(total_loss(torch.tensor(0.3), torch.tensor(9.0), 0.0)) == pytest.approx(0.3)


def test_model_shapes_and_eval_determinism():
    model, _ = tiny_setup()
    model.eval()
    x = torch.rand(3, 2, 6, dtype=torch.float64)
    z = model.encode(x)
    assert z.shape == (3, 2, 8)
    assert torch.equal(z, model.encode(x))
    poses, counters = model.decode(z)
    assert poses.shape == (3, 2, 6) and counters.shape == (3, 2)
    with pytest.raises(ValueError):
        model.encode(torch.rand(3, 3, 6, dtype=torch.float64))
    with pytest.raises(ValueError):
        model.decode(torch.rand(3, 2, 5, dtype=torch.float64))


def test_encoder_local_lipschitz():
    model, _ = tiny_setup()
    model.eval()
    g = torch.Generator().manual_seed(5)
    x = torch.rand(1, 2, 6, dtype=torch.float64, generator=g)
    # local constant from finite differences along random unit directions
    L = 0.0
    with torch.no_grad():
        for _ in range(20):
            d = torch.randn(1, 2, 6, dtype=torch.float64, generator=g)
            d /= torch.linalg.vector_norm(d)
            L = max(L, float(torch.linalg.vector_norm(model.encode(x + 1e-6 * d) - model.encode(x))) / 1e-6)
        for _ in range(20):
            d = torch.randn(1, 2, 6, dtype=torch.float64, generator=g)
            d *= 1e-3 / torch.linalg.vector_norm(d)
            dz = float(torch.linalg.vector_norm(model.encode(x + d) - model.encode(x)))
            assert dz <= 1.5 * L * 1e-3


# --- small corpus training --------------------------------------------------------

# fixed from a seed-0 pilot that measured 0.297
EIGHT_PRIMITIVE_MSE_FRACTION = 0.35


@pytest.mark.slow
def test_eight_primitive_reconstruction():
    from vqslp.codebook.train import corpus_training_data
    from vqslp.pose_data import SyntheticConfig, generate_synthetic_corpus
    corpus = generate_synthetic_corpus(SyntheticConfig(n_primitives=8, n_sentences=150))
    cfg = CodebookConfig.toy(vocab_size=32, embed=16, epochs=40, lr=3e-3)
    X, _, _ = corpus_training_data(corpus, cfg)
    variance = float(X.reshape(-1, X.shape[2]).var(0).mean())
    _, history = fit_codebook(X, cfg)
    assert history[-1]["final_reconstruction_mse"] < EIGHT_PRIMITIVE_MSE_FRACTION * variance
