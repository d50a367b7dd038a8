import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from crossattn.asge import (AsgeConfig, AsgeNetwork, asge_loss, embedding_similarity_report,
                            export_embeddings, forward_embeddings, relaxation_gate,
                            relaxed_asge_loss, train_asge)
from crossattn.label_graph import AnnotationSet, build_graph
from crossattn.nn_core import NonFiniteError, Parameter, Tensor, grad_check, make_rng, pairwise_cosine


def random_target(n, seed):
    rng = make_rng(seed, 99)
    U = rng.uniform(0, 1, size=(n, n))
    A = np.triu(U, 1)
    A = A + A.T
    np.fill_diagonal(A, 1.0)
    return A


def mean_offdiag_residual(E, A):
    cos = pairwise_cosine(E, E).data
    off = ~np.eye(len(A), dtype=bool)
    return float(np.abs(cos - A)[off].mean())


def test_config_validation():
    with pytest.raises(ValueError):
        AsgeConfig(alpha=1.0)
    with pytest.raises(ValueError):
        AsgeConfig(hidden=(8, 8, 8))
    AsgeConfig(alpha=0.0)


def test_forward_shape_and_determinism():
    a = AsgeNetwork(5, (8, 8), 4, make_rng(0, 1))
    b = AsgeNetwork(5, (8, 8), 4, make_rng(0, 1))
    Ea, Eb = forward_embeddings(a), forward_embeddings(b)
    assert Ea.shape == (5, 4)
    assert np.array_equal(Ea.data, Eb.data)


def test_forward_permuted_order_permutes_rows():
    net = AsgeNetwork(6, (8, 8), 4, make_rng(1, 1))
    order = np.array([3, 0, 5, 1, 4, 2])
    base = forward_embeddings(net).data
    np.testing.assert_allclose(forward_embeddings(net, order).data, base[order], atol=1e-12)


def test_loss_examples():
    same = Tensor(np.tile([0.3, -1.0, 2.0], (3, 1)))
    assert asge_loss(same, np.ones((3, 3))).item() == pytest.approx(0.0, abs=1e-20)
    ortho = Tensor([[1.0, 0.0], [0.0, 2.0]])
    assert asge_loss(ortho, np.eye(2)).item() == 0.0
    twins = Tensor([[1.0, 1.0], [1.0, 1.0]])
    assert asge_loss(twins, np.eye(2)).item() == pytest.approx(2.0, abs=1e-12)


def test_loss_counts_ordered_pairs():
    E = Tensor(make_rng(2).normal(size=(3, 4)))
    A = random_target(3, 2)
    cos = pairwise_cosine(E, E).data
    assert asge_loss(E, A).item() == pytest.approx(np.sum((cos - A) ** 2), rel=1e-12)
    upper = np.triu(np.ones((3, 3)), 1)
    assert asge_loss(E, A, include=upper).item() == pytest.approx(
        0.5 * np.sum(((cos - A) ** 2)[~np.eye(3, dtype=bool)]), rel=1e-12)


def test_relaxation_gate_examples():
    assert relaxation_gate(np.array([[0.02]]), np.array([[0.05]]), 0.1)[0, 0] == 0.0
    assert relaxation_gate(np.array([[0.30]]), np.array([[0.05]]), 0.1)[0, 0] == 1.0
    assert relaxation_gate(np.array([[0.02]]), np.array([[0.50]]), 0.1)[0, 0] == 1.0
    assert relaxation_gate(np.array([[0.02]]), np.array([[0.05]]), None)[0, 0] == 1.0


def test_relaxed_alpha_zero_is_plain_loss():
    E = Tensor(make_rng(3).normal(size=(4, 5)))
    A = random_target(4, 3)
    assert relaxed_asge_loss(E, A, 0.0).item() == asge_loss(E, A).item()
    with pytest.raises(ValueError):
        relaxed_asge_loss(E, A, 1.2)


@given(st.integers(0, 10_000), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_relaxed_loss_monotone_in_alpha(seed, a1, a2):
    rng = make_rng(seed)
    E = Tensor(rng.normal(size=(5, 3)))
    A = symmetric = rng.uniform(0, 0.3, size=(5, 5))
    A = (symmetric + symmetric.T) / 2
    lo, hi = sorted((a1, a2))
    full = asge_loss(E, A).item()
    r_lo, r_hi = relaxed_asge_loss(E, A, lo).item(), relaxed_asge_loss(E, A, hi).item()
    assert 0.0 <= r_hi <= r_lo <= full


def test_gated_pair_has_zero_loss_and_zero_gradient():
    net = AsgeNetwork(3, (6, 6), 4, make_rng(4), norm="none")
    E0 = forward_embeddings(net).data
    cos01 = pairwise_cosine(E0, E0).data[0, 1]
    alpha = float(np.clip(cos01 + 0.1, 0.05, 0.99))
    assert cos01 < alpha
    A = np.eye(3)
    A[0, 1] = A[1, 0] = alpha / 2
    include = np.zeros((3, 3))
    include[0, 1] = include[1, 0] = 1.0
    loss = asge_loss(forward_embeddings(net), A, alpha, include=include)
    assert loss.item() == 0.0
    for p in net.parameters():
        p.zero_grad()
    loss.backward()
    assert all(not np.any(p.grad) for p in net.parameters())
    # without the gate the same pair does pull
    plain = asge_loss(forward_embeddings(net), A, None, include=include)
    assert plain.item() > 0.0


def test_asge_gradient_check_with_gate():
    # biases in front of batch norm have an exactly-zero gradient, which only measures
    # finite-difference noise, so check the gated loss on the plain network
    net = AsgeNetwork(5, (6, 6), 4, make_rng(5, 1), norm="none")
    A = random_target(5, 5) * 0.3
    np.fill_diagonal(A, 1.0)
    assert grad_check(lambda: asge_loss(forward_embeddings(net), A, 0.1), net.parameters()) <= 1e-4


def test_zero_epochs_returns_initial_embeddings():
    cfg = AsgeConfig(hidden=(8, 8), dim=4, epochs=0, seed=6)
    res = train_asge(np.eye(5), cfg)
    fresh = AsgeNetwork(5, (8, 8), 4, make_rng(6, 1))
    np.testing.assert_allclose(res.embeddings, forward_embeddings(fresh).data, atol=1e-12)
    assert res.losses == []


def test_identity_target_gives_orthogonal_embeddings():
    res = train_asge(np.eye(4), AsgeConfig(hidden=(32, 32), dim=8, epochs=1000, seed=0))
    cos = pairwise_cosine(res.embeddings, res.embeddings).data
    assert np.max(np.abs(cos[~np.eye(4, dtype=bool)])) <= 0.05
    assert np.all(np.linalg.norm(res.embeddings, axis=1) > 1e-6)


def test_realizable_target_is_fitted():
    # a target that is itself a cosine Gram matrix can be matched closely
    rng = make_rng(7)
    V = rng.normal(size=(8, 3))
    A = pairwise_cosine(V, V).data
    res = train_asge(A, AsgeConfig(hidden=(64, 64), dim=16, epochs=2000, seed=7))
    assert mean_offdiag_residual(res.embeddings, A) <= 0.05


def test_trainer_reaches_least_squares_optimum_on_random_target():
    A = random_target(10, 0)
    res = train_asge(A, AsgeConfig(hidden=(64, 64), dim=16, epochs=2000, seed=0))
    E_best, best_loss = oracles.best_cosine_fit(A, 16)
    assert res.losses[-1] <= best_loss * 1.02 + 1e-6
    assert mean_offdiag_residual(res.embeddings, A) == pytest.approx(
        mean_offdiag_residual(E_best, A), abs=5e-3)


def test_divergence_is_reported():
    with pytest.raises(NonFiniteError):
        train_asge(random_target(4, 1), AsgeConfig(hidden=(8, 8), dim=4, epochs=50, lr=1e200))


def test_similarity_report_matches_loop_recomputation():
    graph = build_graph(AnnotationSet(3, [{0, 1}, {0}, {1, 2}]))
    E = make_rng(8).normal(size=(3, 4))
    rep = embedding_similarity_report(E, graph.A_sym, alpha=0.1)
    resid = []
    for (i, j, a, c, s, r) in rep.rows:
        cos = oracles.cosine(E[i], E[j])
        assert c == pytest.approx(cos, abs=1e-12) and r == pytest.approx(cos - a, abs=1e-12)
        assert s == (0.0 if a < 0.1 and cos < 0.1 else 1.0)
        if s:
            resid.append(abs(cos - a))
    assert rep.mean_residual == pytest.approx(sum(resid) / len(resid), abs=1e-12)
    assert rep.max_residual == pytest.approx(max(resid), abs=1e-12)


def test_similarity_report_degenerate_cases():
    E = np.eye(3)
    rep = embedding_similarity_report(E, np.eye(3), alpha=0.0)
    assert rep.max_residual == pytest.approx(0.0, abs=1e-15) and rep.relaxed_fraction == 0.0


def test_export_embeddings(tmp_path):
    res = train_asge(np.eye(3), AsgeConfig(hidden=(4, 4), dim=2, epochs=3, seed=0))
    export_embeddings(tmp_path, res, ["a", "b", "c"])
    lines = (tmp_path / "asge_loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,relaxed_fraction" and len(lines) == 4
    assert (tmp_path / "embeddings.csv").read_text().splitlines()[1].startswith("a,")
    assert (tmp_path / "embeddings.cmat").exists()
