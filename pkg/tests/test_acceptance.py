"""Acceptance suite: the headline guarantees of the pipeline, each as one
test that prints a single PASS/FAIL line with the measured numbers.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines. The
empirical tests (accuracy, sub-task drops) run against the session-scoped
trained model and full dissection cached under tests/_artifacts.
"""

import numpy as np
import pytest

from gatednet.analysis import evaluate_subtask, similarity_matrix
from gatednet.cli import main
from gatednet.dissect import gate_gradient, soft_target_loss
from gatednet.inference import masked_forward, masked_softmax
from gatednet.layers import softmax
from gatednet.model import forward, forward_gated
from gatednet.reconstruct import combine, running_fraction, union_combine, xor_combine
from gatednet.train import evaluate_accuracy

from util import finite_difference, rel_error, reference_gated_forward


def report(name: str, ok: bool, detail: str) -> None:
    print(f"\n{'PASS' if ok else 'FAIL'}: {name} -- {detail}")
    assert ok, f"{name}: {detail}"


def test_gate_gradient_matches_finite_differences(trained_net, dataset):
    """Analytic gate gradient vs central finite differences (h=1e-5) on
    the trained network, 5 test images, all 56 gates."""
    _, test_set = dataset
    rng = np.random.default_rng(0)
    worst = 0.0
    # The trained network is confident, so many KL gradient components sit
    # at 1e-9 and below, where central-difference roundoff (~1e-11) would
    # dominate a pure ratio. The 1e-4 floor checks such components
    # absolutely to 1e-9 instead, still three decades above FD noise.
    for i in range(5):
        x = test_set.images[i]
        orig = forward(trained_net, x).ravel()
        # random gates away from the all-ones stationary point
        gates = rng.uniform(0.5, 1.5, trained_net.total_gated_channels)
        kl, _ = gate_gradient(trained_net, x, gates)
        fd = finite_difference(
            lambda v: soft_target_loss(orig, trained_net.run(x, gates=v).ravel())[0],
            gates, h=1e-5)
        worst = max(worst, float(rel_error(kl, fd, floor=1e-4).max()))
        # identity gates: a stationary point, both gradients are ~0
        gates1 = np.ones(trained_net.total_gated_channels)
        kl1, _ = gate_gradient(trained_net, x, gates1)
        fd1 = finite_difference(
            lambda v: soft_target_loss(orig, trained_net.run(x, gates=v).ravel())[0],
            gates1, h=1e-5)
        worst = max(worst, float(rel_error(kl1, fd1, floor=1e-4).max()))
    report("gate gradient vs finite differences", worst <= 1e-5,
           f"max relative error {worst:.3e} (tolerance 1e-5)")


def test_identity_gates_do_not_change_the_network(trained_net, dataset):
    """All-ones gates must reproduce the ungated forward pass bitwise, and
    an all-ones mask must match within 1e-9, on 100 test images."""
    _, test_set = dataset
    x = test_set.images[:100]
    base = forward(trained_net, x)
    gated = forward_gated(trained_net, x,
                          np.ones(trained_net.total_gated_channels))
    bitwise = np.array_equal(base, gated)
    mask = np.ones(trained_net.total_gated_channels, dtype=np.int64)
    masked_diff = float(np.abs(masked_forward(trained_net, x, mask) - base).max())
    report("identity gates leave logits unchanged", bitwise and masked_diff <= 1e-9,
           f"gated bitwise equal: {bitwise}, all-ones mask max diff {masked_diff:.3e}")


def test_skipped_computation_is_exact(trained_net, dataset):
    """Reduced-filter evaluation vs the dense zero-gate oracle on 200
    random (image, mask) pairs."""
    _, test_set = dataset
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        x = test_set.images[int(rng.integers(len(test_set)))]
        mask = rng.integers(0, 2, trained_net.total_gated_channels)
        got = masked_forward(trained_net, x, mask)
        want = reference_gated_forward(trained_net, x, mask.astype(np.float64))
        worst = max(worst, float(np.abs(got - want).max()))
    report("skipped computation matches dense oracle", worst <= 1e-9,
           f"max logit diff over 200 random masks {worst:.3e} (tolerance 1e-9)")


def test_mask_combination_matches_brute_force():
    """union/xor combiners vs an element-by-element brute-force oracle on
    1000 random instances, plus threshold monotonicity."""
    from test_reconstruct import brute_force_union, brute_force_xor, civ

    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        k = int(rng.integers(2, 5))
        rows = rng.random((k, n))
        thr = float(rng.random())
        civs = [civ(i, rows[i]) for i in range(k)]
        if union_combine(civs, thr).mask.tolist() != brute_force_union(rows, thr):
            mismatches += 1
        if xor_combine(civs[0], civs[1], thr).mask.tolist() != \
                brute_force_xor(rows[0], rows[1], thr):
            mismatches += 1
    monotone = True
    for _ in range(20):
        civs = [civ(i, rng.random(56)) for i in range(2)]
        prev = None
        for thr in np.linspace(0, 1.1, 12):
            ones = set(np.flatnonzero(union_combine(civs, thr).mask))
            if prev is not None and not ones <= prev:
                monotone = False
            prev = ones
    report("mask combination matches brute force", mismatches == 0 and monotone,
           f"{mismatches} mismatches in 1000 instances, monotone: {monotone}")


def test_subtask_accuracy_and_compute_budget(trained_net, trained_accuracy,
                                             dataset, dissection):
    """Base accuracy >= 98%; over 10 seeded class pairs, a single swept
    union threshold gives mean running channels <= 60% with mean accuracy
    drop <= 1.5pp and max drop <= 4pp; dissection ran within 30 minutes."""
    civs, meta = dissection
    _, test_set = dataset
    rng = np.random.default_rng(3)
    ids = sorted(civs)
    pairs = []
    while len(pairs) < 10:
        pair = sorted(rng.choice(ids, size=2, replace=False).tolist())
        if pair not in pairs:
            pairs.append(pair)
    # smallest threshold whose mean running-channel fraction is <= 60%
    top = float(max(c.values.max() for c in civs.values()))
    threshold = None
    for thr in np.linspace(0, top, 101):
        fracs = [running_fraction(combine([civs[a], civs[b]], "union", thr).mask)
                 for a, b in pairs]
        if np.mean(fracs) <= 0.60:
            threshold = float(thr)
            break
    assert threshold is not None, "no threshold reached 60% mean running channels"
    results = [evaluate_subtask(trained_net, test_set.images, test_set.labels,
                                combine([civs[a], civs[b]], "union", threshold))
               for a, b in pairs]
    drops = np.array([r.accuracy_drop for r in results])
    mean_frac = float(np.mean([r.running_channel_fraction for r in results]))
    minutes = meta["elapsed_seconds"] / 60
    ok = (trained_accuracy >= 0.98 and mean_frac <= 0.60
          and drops.mean() <= 0.015 and drops.max() <= 0.04
          and minutes <= 30)
    report("sub-task accuracy within budget", ok,
           f"base acc {trained_accuracy:.4f} (>=0.98), thr {threshold:.4f}, "
           f"mean running channels {mean_frac:.1%} (<=60%), "
           f"mean drop {drops.mean() * 100:+.2f}pp (<=1.5), "
           f"max drop {drops.max() * 100:+.2f}pp (<=4), "
           f"dissection {minutes:.1f} min (<=30)")


def test_masked_softmax_is_a_distribution():
    """1000 random logit vectors: probabilities vanish outside the class
    set, sum to 1 inside it, and preserve the restricted argmax."""
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(1000):
        k = int(rng.integers(2, 12))
        logits = rng.uniform(-40, 40, size=k)
        size = int(rng.integers(1, k + 1))
        class_set = sorted(rng.choice(k, size=size, replace=False).tolist())
        probs = masked_softmax(logits, class_set)
        outside = np.setdiff1d(np.arange(k), class_set)
        inside_sum = probs[class_set].sum()
        restricted = class_set[int(np.argmax(softmax(logits)[class_set]))]
        if not ((probs[outside] == 0.0).all()
                and abs(inside_sum - 1.0) <= 1e-12
                and int(np.argmax(probs)) == restricted):
            bad += 1
    report("masked softmax is a proper distribution", bad == 0,
           f"{bad} violations in 1000 random logit vectors")


def test_class_similarity_matrix(dissection):
    """Similarity matrix over all 10 classes is symmetric with a unit
    diagonal; reports how distinct class 1 is from the rest."""
    civs, _ = dissection
    sim = similarity_matrix(civs)
    symmetric = np.array_equal(sim.values, sim.values.T)
    unit_diag = np.allclose(np.diag(sim.values), 1.0)
    i = sim.class_ids.index(1)
    row_mean = float(np.delete(sim.values[i], i).mean())
    off_diag = float(sim.values[~np.eye(len(sim.class_ids), dtype=bool)].mean())
    report("class similarity matrix well-formed",
           symmetric and unit_diag and len(sim.class_ids) == 10,
           f"symmetric: {symmetric}, unit diagonal: {unit_diag}, "
           f"class-1 mean similarity {row_mean:.3f}, "
           f"overall off-diagonal mean {off_diag:.3f}")


def test_every_stage_is_deterministic(tmp_path):
    """Running the full reduced-scale pipeline twice with the same seeds
    produces bitwise-identical artifact files at every stage."""
    outputs = {}
    for run in ("a", "b"):
        root = tmp_path / run
        d = str(root / "data")
        model = str(root / "m.drnm")
        civ = str(root / "m.civ.csv")
        cdrp = str(root / "m.cdrp.csv")
        cciv = str(root / "pair.cciv.csv")
        results = str(root / "results.csv")
        assert main(["synth-data", "--data-dir", d, "--seed", "5",
                     "--train-per-class", "40", "--test-per-class", "10"]) == 0
        assert main(["train", "--data-dir", d, "--model", model,
                     "--epochs", "2", "--batch-size", "16", "--seed", "9"]) == 0
        assert main(["dissect", "--data-dir", d, "--model", model, "--out", civ,
                     "--cdrp-archive", cdrp, "--per-class-n", "4",
                     "--iterations", "8"]) == 0
        assert main(["reconstruct", "--civ", civ, "--classes", "0 1",
                     "--thr", "0.1", "--out", cciv]) == 0
        assert main(["eval", "--data-dir", d, "--model", model, "--civ", civ,
                     "--pairs", "3", "--seed", "2", "--thr", "0.1",
                     "--out", results]) == 0
        outputs[run] = {
            p.relative_to(root): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()
        }
    same = (sorted(outputs["a"]) == sorted(outputs["b"])
            and all(outputs["a"][k] == outputs["b"][k] for k in outputs["a"]))
    report("pipeline is seed-deterministic", same,
           f"{len(outputs['a'])} artifact files bitwise identical across reruns: {same}")
