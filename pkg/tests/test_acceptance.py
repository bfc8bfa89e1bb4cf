"""End-to-end acceptance checks, one test group per numbered criterion.

Run with ``pytest tests/test_acceptance.py -v -s``; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import math
import shutil
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from ordlab import cli, rng
from ordlab.data import (
    PreprocessConfig,
    load_cifar10,
    load_mnist_idx,
    subset_per_class,
    synthetic_blobs,
    write_cifar10,
    write_mnist_idx,
)
from ordlab.errors import FormatError
from ordlab.explorer import (
    ExploreConfig,
    count_orderings,
    explore,
    total_iterations,
    write_distribution_csv,
    write_ledger_csv,
)
from ordlab.metrics import strip_wall_seconds, write_metrics_csv
from ordlab.nn import ConvBlock, ModelSpec, build_model, mixed_bce_loss, restore, softmax_cross_entropy, state_hash
from ordlab.poa import LearningItem, LoaderConfig, make_external_reference, run_poa_training, score_max_loss_delta
from ordlab.sumaug import (
    CascadeConfig,
    GradualConfig,
    gcc,
    mix_batch_average,
    mix_batch_weighted,
    run_cascade,
    run_gradual_cascade,
    spike_flags,
)
from ordlab.training import TrainConfig, TrainState, run_training, train_step
from ordlab.tta import AttackConfig, TTAConfig, attack, fgsm, pgd, plain_evaluate, tta_evaluate
from oracles import cifar_record_bytes, finite_difference, idx_bytes, naive_group_mean, relative_error

from conftest import MNIST

CIFAR_PREP = PreprocessConfig(mean=(0.49, 0.48, 0.45), std=(0.25, 0.24, 0.26))
CIFAR_NET = ModelSpec("conv", (3, 32, 32), 10, conv_blocks=(ConvBlock(16), ConvBlock(32)))


# 1. GCC suite


@pytest.mark.criterion(1)
def test_gcc_grid_properties():
    started = time.perf_counter()
    for n in (2, 3, 4, 8):
        previous = None
        for i in range(1001):
            t = i / 1000
            c = np.array(gcc(n, t).coefficients)
            k = math.floor(Fraction(i, 1000) * (n - 1))
            assert np.all(c >= 0), (n, t)
            assert abs(c.sum() - 1) <= 1e-9, (n, t)
            zeros = n - 1 - int(np.max(np.flatnonzero(c > 0)))
            assert zeros == k, (n, t)
            live = n - k
            if previous is not None and previous[0] == k and live > 1:
                # inside one segment the decaying entry shrinks and the raised entries grow
                assert c[live - 1] <= previous[1][live - 1]
                assert np.all(c[: live - 1] >= previous[1][: live - 1])
            previous = (k, c)
        for k in range(n - 1):
            right = Fraction(k + 1, n - 1)
            c = gcc(n, float(right) - 1e-7).coefficients
            assert c[n - k - 1] < 1e-6, (n, k)
    assert gcc(2, 0.5).coefficients == (0.875, 0.125)
    assert time.perf_counter() - started < 1.0


# 2. Mixing oracle


@pytest.mark.criterion(2)
def test_mixing_matches_naive_oracle():
    gen = rng.stream(2, "mixing")
    for _ in range(1000):
        m = int(gen.choice([4, 8, 16, 128]))
        divisors = [d for d in range(1, m + 1) if m % d == 0]
        K = int(gen.choice(divisors))
        classes = int(gen.integers(2, 11))
        batch = gen.normal(size=(m, 2, 3, 3))
        labels = gen.integers(0, classes, m)
        out = mix_batch_average(batch, labels, K, classes)
        ref_x, ref_y = naive_group_mean(batch, labels, K, classes)
        assert np.max(np.abs(out.inputs - ref_x)) <= 1e-12
        assert np.max(np.abs(out.soft_targets - ref_y)) <= 1e-12
        assert np.all(np.abs(out.soft_targets.sum(axis=1) - 1) <= 1e-9)


@pytest.mark.criterion(2)
def test_gcc_start_mixing_equals_average():
    gen = rng.stream(2, "gcc-mix")
    for n in (1, 2, 3, 4, 5, 6, 7, 8, 16):
        batch = gen.random((n * 6, 3, 4, 4)).astype(np.float32)
        labels = gen.integers(0, 10, n * 6)
        w = mix_batch_weighted(batch, labels, gcc(n, 0.0), 10)
        a = mix_batch_average(batch, labels, n, 10)
        assert np.array_equal(w.inputs, a.inputs)
        assert np.array_equal(w.soft_targets, a.soft_targets)


# 3. Gradient check


def _check_gradients(model, loss_fn, x):
    _, g = loss_fn(model.forward(x))
    model.backward(g)
    analytic = [a.copy() for a in model.gradients()]

    def f():
        model.bump_version()
        return loss_fn(model.forward(x))[0]

    numeric = finite_difference(f, model.parameters())
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


@pytest.mark.criterion(3)
def test_gradient_check_against_finite_differences():
    started = time.perf_counter()
    mlp = ModelSpec("mlp", (2,), 3, widths=(8,), dtype="float64")
    conv = ModelSpec("conv", (1, 5, 5), 3, conv_blocks=(ConvBlock(2),), dtype="float64")
    worst = 0.0
    for seed in range(100):
        gen = np.random.default_rng(seed)
        for spec in (mlp, conv):
            x = gen.normal(size=(3,) + spec.input_shape)
            y = gen.integers(0, 3, 3)
            soft = gen.random((3, 3))
            K = int(gen.integers(1, 5))
            for loss_fn in (lambda z: softmax_cross_entropy(z, y), lambda z: mixed_bce_loss(z, soft, K)):
                model = build_model(spec, rng.stream(seed, "init"))
                worst = max(worst, _check_gradients(model, loss_fn, x))
    print(f"worst relative gradient error {worst:.3e}")
    assert worst < 1e-5
    assert time.perf_counter() - started < 30


# 4. Rollback exactness


@pytest.mark.criterion(4)
def test_scorer_rollback_is_exact():
    train = synthetic_blobs(4, 30, 12, 2.0, seed=4)
    test = synthetic_blobs(4, 30, 12, 2.0, seed=4, split="test")
    spec = ModelSpec("mlp", (12,), 4, widths=(16,))
    state = TrainState.create(spec, TrainConfig(lr=0.05, batch_size=10), seed=4)
    prep = PreprocessConfig()
    for i in range(5):
        idx = np.arange(i * 10, i * 10 + 10)
        train_step(state, train.images[idx], train.labels[idx], prep)
    assert any(np.any(v) for v in state.optimizer.velocity)
    gen = rng.stream(4, "rollback")
    for call in range(100):
        size = int(gen.integers(1, 20))
        item = LearningItem(call, "batch", tuple(gen.choice(len(train), size, replace=False)))
        reference = make_external_reference(test, 32, seed=call) if call % 2 else None
        mode = ("absolute", "relative")[(call // 2) % 2]
        before = state_hash(state.model, state.optimizer)
        score_max_loss_delta(state.model, state.optimizer, item, train, prep, reference, mode)
        assert state_hash(state.model, state.optimizer) == before


# 5. Explorer micro-run


@pytest.mark.criterion(5)
def test_explorer_micro_run(tmp_path):
    started = time.perf_counter()
    train = synthetic_blobs(2, 8, 4, 2.0, seed=1)
    test = synthetic_blobs(2, 20, 4, 2.0, seed=1, split="test")
    spec = ModelSpec("mlp", (4,), 2, widths=(8,))
    cfg = TrainConfig(lr=0.1, batch_size=4)
    ecfg = ExploreConfig(batch_size=4, epochs=2, clusters=12)
    serial = explore(train, test, spec, cfg, ecfg, seed=0, workers=1)
    parallel = explore(train, test, spec, cfg, ecfg, seed=0, workers=4)
    _, ledger, initial, kept = serial
    assert len(ledger) == total_iterations(count_orderings(16, 4), 12, 2) == 312
    assert len(kept[0]) == 12
    assert all(r.parent_hash == initial for r in ledger if r.epoch == 0)
    write_ledger_csv(tmp_path / "serial.csv", ledger)
    write_ledger_csv(tmp_path / "parallel.csv", parallel[1])
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "parallel.csv").read_bytes()
    assert parallel[2] == initial
    assert time.perf_counter() - started < 300


# 6. Formula reproduction


@pytest.mark.criterion(6)
def test_iteration_counts():
    assert count_orderings(48, 8) == 720
    assert total_iterations(720, 12, 13) == 104400


# 7. Perfect-ordering spread on MNIST 0/1


@pytest.mark.criterion(7)
@pytest.mark.slow
def test_mnist_permutation_spread(mnist01, tmp_path):
    started = time.perf_counter()
    train, test = mnist01
    train = subset_per_class(train, 24, classes={0, 1}, seed=0)
    spec = ModelSpec("conv", (1, 28, 28), 2, conv_blocks=(ConvBlock(4),))
    cfg = TrainConfig(lr=0.001, batch_size=8)
    dists, ledger, initial, _ = explore(train, test, spec, cfg, ExploreConfig(batch_size=8, epochs=1), seed=0)
    assert len(ledger) == 720
    assert all(r.parent_hash == initial for r in ledger)
    spread = dists[0].max_acc - dists[0].min_acc
    out = tmp_path / "distribution.csv"
    write_distribution_csv(out, dists)
    print(out.read_text(), end="")
    print(f"accuracy spread {spread:.4f} over 720 orderings")
    assert spread > 0.02
    assert time.perf_counter() - started < 15 * 60


# 8. POA equivalence and smoke


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_poa_kappa_one_is_plain_loop(cifar, tmp_path):
    train, test = cifar
    cfg = TrainConfig(lr=0.01, batch_size=25, epochs=1, preprocess=CIFAR_PREP)
    plain, _ = run_training(train, test, CIFAR_NET, cfg, seed=5, run_id="run")
    poa, _ = run_poa_training(train, test, CIFAR_NET, cfg, LoaderConfig(kappa=1), seed=5, run_id="run")
    write_metrics_csv(tmp_path / "plain.csv", plain)
    write_metrics_csv(tmp_path / "poa.csv", poa)
    assert strip_wall_seconds((tmp_path / "plain.csv").read_text()) == strip_wall_seconds(
        (tmp_path / "poa.csv").read_text())


@pytest.mark.criterion(8)
@pytest.mark.slow
def test_poa_sample_loss_ascending_learns(cifar):
    started = time.perf_counter()
    train, test = cifar
    cfg = TrainConfig(lr=0.01, batch_size=25, epochs=3, preprocess=CIFAR_PREP)
    records, _ = run_poa_training(train, test, CIFAR_NET, cfg, LoaderConfig(kappa=8, strategy="ascending"), seed=5)
    print("test accuracy per epoch", [round(r.test_acc, 3) for r in records])
    assert records[-1].test_acc > 0.25
    assert time.perf_counter() - started < 20 * 60


# 9. Cascade smoke (shared with 10)


@pytest.fixture(scope="module")
def cascade_run(cifar):
    train, test = cifar
    cfg = TrainConfig(lr=0.01, batch_size=40, epochs=1, preprocess=CIFAR_PREP)
    started = time.perf_counter()
    records, state, transitions = run_cascade(train, test, CIFAR_NET, cfg, CascadeConfig(start_K=4, patience=200),
                                              seed=3)
    return records, state, transitions, time.perf_counter() - started


@pytest.mark.criterion(9)
@pytest.mark.slow
def test_cascade_stages_and_reloads(cascade_run):
    records, state, transitions, _ = cascade_run
    assert [K for K, _, _ in transitions] == [4, 2, 1]
    assert [r.K_current for r in records if r.event == "eval"][0] == 4
    stage_rows = [r for r in records if r.event in ("transition", "final")]
    for (K, best, ckpt), row in zip(transitions, stage_rows):
        evals = [r.test_acc for r in records if r.event == "eval" and r.K_current == K]
        assert best == max(evals)
        # the reloaded model scores exactly the stage's best accuracy
        assert row.test_acc == best
        assert ckpt.extra["K"] == K
    print("stages", [(K, round(acc, 3)) for K, acc, _ in transitions], "steps", state.step)


@pytest.mark.criterion(9)
@pytest.mark.slow
def test_cascade_matches_equal_budget_baseline(cascade_run, cifar):
    records, state, transitions, cascade_seconds = cascade_run
    train, test = cifar
    epochs = math.ceil(state.step / math.ceil(len(train) / 25))
    cfg = TrainConfig(lr=0.01, batch_size=25, epochs=epochs, preprocess=CIFAR_PREP)
    started = time.perf_counter()
    baseline, _ = run_training(train, test, CIFAR_NET, cfg, seed=3)
    best_baseline = max(r.test_acc for r in baseline)
    final = transitions[-1][1]
    print(f"cascade final {final:.3f} vs baseline best {best_baseline:.3f} ({epochs} epochs, {state.step} steps)")
    assert final >= best_baseline - 0.02
    assert cascade_seconds + time.perf_counter() - started < 45 * 60


@pytest.mark.criterion(9)
@pytest.mark.slow
def test_norm_spikes_cascade_versus_gradual(cascade_run, cifar):
    records, _, _, _ = cascade_run
    norms = [r.l2_norm for r in records]
    flags = np.flatnonzero(spike_flags(norms))
    transition_rows = {i for i, r in enumerate(records) if r.event == "transition"}
    # a flag at delta index i compares rows i and i + 1
    assert any(i + 1 in transition_rows or i in transition_rows for i in flags), flags
    train, test = cifar
    cfg = TrainConfig(lr=0.01, batch_size=40, epochs=1, preprocess=CIFAR_PREP)
    gradual, _ = run_gradual_cascade(train, test, CIFAR_NET, cfg, GradualConfig(n=4, nr_epochs=12,
                                                                                nr_finetune_epochs=3), seed=3)
    gnorms = [r.l2_norm for r in gradual]
    print("cascade flags", flags.tolist(), "gradual norms", [round(v, 2) for v in gnorms])
    assert not spike_flags(gnorms).any()


# 10. TTA identity and direction


@pytest.mark.criterion(10)
def test_tta_identity_is_plain(cifar):
    train, test = cifar
    model = build_model(CIFAR_NET, rng.stream(0, "init"))
    sub = test.take(np.arange(200))
    plain = plain_evaluate(model, sub, CIFAR_PREP)
    tta = tta_evaluate(model, sub, sub, TTAConfig(C=1, lam=1.0, K=1), CIFAR_PREP)
    assert tta[0] == plain[0]
    assert np.array_equal(tta[1], plain[1], equal_nan=True)


@pytest.mark.criterion(10)
@pytest.mark.slow
def test_tta_defends_fgsm_on_k2_model(cascade_run, cifar):
    _, _, transitions, _ = cascade_run
    (ckpt,) = [c for K, _, c in transitions if K == 2]
    model, _, _ = restore(ckpt)
    train, test = cifar
    eps = 8 / 255
    adv = attack(model, test.images, test.labels, AttackConfig("fgsm", eps), CIFAR_PREP)
    plain = plain_evaluate(model, test, CIFAR_PREP, adv)[0]
    tta = tta_evaluate(model, test, test, TTAConfig(C=16, lam=1.0, K=4), CIFAR_PREP, adv)[0]
    clean = plain_evaluate(model, test, CIFAR_PREP)[0]
    print(f"clean {clean:.3f}, FGSM plain {plain:.3f}, FGSM with TTA {tta:.3f}")
    assert tta >= plain


@pytest.mark.criterion(10)
def test_pgd_single_step_is_fgsm(cifar):
    train, test = cifar
    model = build_model(CIFAR_NET, rng.stream(1, "init"))
    x, y = test.images[:100], test.labels[:100]
    eps = 8 / 255
    assert np.array_equal(pgd(model, x, y, eps, eps, 1, CIFAR_PREP), fgsm(model, x, y, eps, CIFAR_PREP))


# 11. Loader fidelity


@pytest.mark.criterion(11)
def test_cifar_round_trip_and_errors(tmp_path):
    gen = np.random.default_rng(11)
    pix = gen.integers(0, 256, size=(12, 3, 32, 32), dtype=np.uint8)
    labels = gen.integers(0, 10, 12)
    raw = b"".join(cifar_record_bytes(p, l) for p, l in zip(pix, labels))
    (tmp_path / "a.bin").write_bytes(raw)
    ds = load_cifar10(tmp_path / "a.bin")
    assert len(ds) == 12 and ds.labels.tolist() == labels.tolist()
    write_cifar10(tmp_path / "b.bin", ds.images, ds.labels)
    assert (tmp_path / "b.bin").read_bytes() == raw
    (tmp_path / "short.bin").write_bytes(raw[:-7])
    with pytest.raises(FormatError, match="short.bin"):
        load_cifar10(tmp_path / "short.bin")
    bad = bytearray(raw)
    bad[3073] = 11
    (tmp_path / "label.bin").write_bytes(bytes(bad))
    with pytest.raises(FormatError, match="label byte 11"):
        load_cifar10(tmp_path / "label.bin")


@pytest.mark.criterion(11)
def test_mnist_round_trip_and_errors(tmp_path):
    gen = np.random.default_rng(12)
    pix = gen.integers(0, 256, size=(9, 28, 28), dtype=np.uint8)
    labels = gen.integers(0, 10, 9)
    (tmp_path / "img").write_bytes(idx_bytes(0x803, pix))
    (tmp_path / "lbl").write_bytes(idx_bytes(0x801, labels))
    ds = load_mnist_idx(tmp_path / "img", tmp_path / "lbl")
    write_mnist_idx(tmp_path / "img2", tmp_path / "lbl2", ds.images, ds.labels)
    assert (tmp_path / "img2").read_bytes() == (tmp_path / "img").read_bytes()
    assert (tmp_path / "lbl2").read_bytes() == (tmp_path / "lbl").read_bytes()
    (tmp_path / "wrong").write_bytes(idx_bytes(0x801, pix))
    with pytest.raises(FormatError, match="magic"):
        load_mnist_idx(tmp_path / "wrong", tmp_path / "lbl")
    (tmp_path / "trunc").write_bytes(idx_bytes(0x803, pix)[:-1])
    with pytest.raises(FormatError):
        load_mnist_idx(tmp_path / "trunc", tmp_path / "lbl")
    (tmp_path / "few").write_bytes(idx_bytes(0x801, labels[:5]))
    with pytest.raises(FormatError):
        load_mnist_idx(tmp_path / "img", tmp_path / "few")


# 12. End-to-end determinism

E2E_CONFIG = f"""\
run.seed = 2
dataset.kind = mnist
dataset.num_classes = 2
dataset.train_images = {MNIST / 'train-images-idx3-ubyte'}
dataset.train_labels = {MNIST / 'train-labels-idx1-ubyte'}
dataset.test_images = {MNIST / 'test-images-idx3-ubyte'}
dataset.test_labels = {MNIST / 'test-labels-idx1-ubyte'}
dataset.per_class = 12
dataset.test_per_class = 40
dataset.mean = 0.13
dataset.std = 0.3
model.kind = mlp
model.widths = 16
optim.lr = 0.01
optim.batch_size = 8
optim.epochs = 2
poa.kappa = 2
poa.scorer = max_loss_delta_external
poa.reference_size = 16
explorer.batch_size = 6
explorer.clusters = 3
sumaug.start_k = 4
sumaug.patience = 6
sumaug.eval_every = 3
sumaug.n = 2
sumaug.nr_epochs = 2
tta.c = 4
tta.k = 2
tta.limit = 20
tta.pgd_steps = 3
"""


def _artifacts(directory):
    out = {}
    for path in sorted(Path(directory).rglob("*")):
        if path.is_file():
            data = path.read_bytes()
            if path.suffix == ".csv":
                data = strip_wall_seconds(data.decode()).encode()
            out[str(path.relative_to(directory))] = data
    return out


@pytest.mark.criterion(12)
@pytest.mark.parametrize("subcommand", cli.SUBCOMMANDS)
def test_subcommand_is_deterministic(subcommand, tmp_path):
    config = tmp_path / "exp.cfg"
    config.write_text(E2E_CONFIG)
    out = tmp_path / "out"
    if subcommand == "plot":
        cli.run_command("train", config, out=str(tmp_path / "source"))
        out.mkdir()
        shutil.copy(tmp_path / "source" / "metrics.csv", out / "metrics.csv")
    cli.run_command(subcommand, config, out=str(out))
    first = _artifacts(out)
    cli.run_command(subcommand, config, out=str(out))
    second = _artifacts(out)
    assert first == second
    expected = {
        "train": "metrics.csv", "poa": "metrics.csv", "explore": "ledger.csv", "cascade": "stage_K1.ckpt",
        "gradual": "metrics.csv", "tta": "tta.csv", "attack-eval": "robustness.csv", "plot": "plots/test_acc.svg",
    }[subcommand]
    assert expected in first
    assert "events.log" in first and "config.resolved" in first
