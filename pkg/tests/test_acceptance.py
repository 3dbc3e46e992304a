"""Acceptance criteria 1 to 9. Each test prints one PASS/FAIL line before asserting."""

import math
import struct
import time

import numpy as np
import pytest
from oracles import dft2_naive

from seuseg.attention import AttnParams, mhca, mhsa
from seuseg.config import ModelConfig, RunConfig
from seuseg.data import (
    Dataset,
    decode_pgm,
    decode_tensors,
    encode_pgm,
    encode_tensors,
    synth_generate,
)
from seuseg.data.vocab import VOCAB
from seuseg.errors import FormatError
from seuseg.gradsuite import MODEL_TOLERANCE, OP_CHECKS, OP_TOLERANCE, full_model_check
from seuseg.loss import dice_loss, entropy_regularizer, spectral_consistency
from seuseg.model import ModelParams, model_forward
from seuseg.numerics import Var, conv2d, conv_transpose2d, dft2_magnitude, pixel_shuffle, pixel_unshuffle, softmax
from seuseg.ssmix import selective_scan, selective_scan_oracle
from seuseg.trainer import REFERENCE_DICE, run_ablation, train


@pytest.fixture
def announce(capsys):
    def emit(number: int, ok: bool, text: str):
        with capsys.disabled():
            print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'}: {text}")
    return emit


@pytest.fixture(scope="module")
def desk_data():
    samples, manifest = synth_generate(seed=0, count=300, size=64)
    return Dataset.from_samples(samples, manifest)


def desk_config() -> RunConfig:
    # default config with the 50-epoch budget; the cosine horizon stays at its default
    return RunConfig().with_overrides(max_epochs=50)


def test_criterion_1_selective_scan_oracle(announce):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        b, d, s, n = int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 33))
        args = (rng.normal(size=(b, d, n)), rng.uniform(0.0, 1.0, size=(b, d, n)), -np.exp(rng.normal(size=(d, s))),
                rng.normal(size=(b, s, n)), rng.normal(size=(b, s, n)), rng.normal(size=d))
        worst = max(worst, float(np.max(np.abs(selective_scan(*args).value - selective_scan_oracle(*args)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    announce(1, ok, f"selective scan vs loop oracle, 100 instances, max abs err {worst:.2e} (<= 1e-12), "
                    f"{elapsed:.2f}s (< 10s)")
    assert ok


def test_criterion_2_dft_oracle(announce):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for size in [8] * 10 + [16] * 10:
        x = rng.normal(size=(size, size))
        got = dft2_magnitude(Var(x[None, None])).value[0, 0]
        worst = max(worst, float(np.max(np.abs(got - np.abs(dft2_naive(x))))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 5
    announce(2, ok, f"DFT magnitude vs naive DFT, 20 inputs (8x8, 16x16), max abs err {worst:.2e} (<= 1e-9), "
                    f"{elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_3_gradient_suite(announce):
    t0 = time.perf_counter()
    errors = {name: check(np.random.default_rng(0)) for name, check in OP_CHECKS.items()}
    model_err = full_model_check(np.random.default_rng(0))
    elapsed = time.perf_counter() - t0
    bad = sorted(n for n, e in errors.items() if not e <= OP_TOLERANCE)
    worst_op = max(errors, key=errors.get)
    ok = not bad and model_err <= MODEL_TOLERANCE and elapsed < 120
    announce(3, ok, f"{len(errors)} ops worst {worst_op} {errors[worst_op]:.2e} (<= 1e-6), failing {bad or 'none'}; "
                    f"full model + SEU loss at H=32, B=2: {model_err:.2e} (<= 1e-5); {elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_4_loss_anchors(announce):
    rng = np.random.default_rng(4)
    fg = (rng.uniform(size=(2, 16, 16)) < 0.3).astype(np.float64)
    g = np.stack([1 - fg, fg], axis=1)
    d, s, e = dice_loss(g, g).value, spectral_consistency(g, g).value, entropy_regularizer(g).value
    uniform = entropy_regularizer(np.full_like(g, 0.5)).value
    ok = d <= 1e-5 and s == 0.0 and e <= 1e-6 and abs(uniform - math.log(2)) <= 1e-9
    announce(4, ok, f"perfect prediction: dice {d:.1e} (<= 1e-5), spectral {s} (== 0), entropy {e:.1e} (<= 1e-6); "
                    f"uniform entropy - ln2 = {uniform - math.log(2):.1e} (|.| <= 1e-9)")
    assert ok


def _invariants() -> dict[str, bool]:
    rng = np.random.default_rng(5)
    out = {}
    sm = softmax(Var(rng.normal(size=(3, 2, 5, 5)) * 10), axis=1).value
    out["softmax normalization"] = bool(np.all(sm >= 0) and np.max(np.abs(sm.sum(axis=1) - 1)) <= 1e-12)

    x = rng.normal(size=(2, 32, 3, 3))
    out["pixel-shuffle bijection"] = bool(
        np.array_equal(pixel_unshuffle(pixel_shuffle(Var(x), 4), 4).value, x)
        and np.array_equal(np.sort(pixel_shuffle(Var(x), 4).value.ravel()), np.sort(x.ravel())))

    a, y, k = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 5, 8, 8)), rng.normal(size=(3, 5, 2, 2))
    conv_adj = abs(np.vdot(conv2d(Var(y), Var(k), stride=2).value, a) - np.vdot(y, conv_transpose2d(Var(a), Var(k)).value))
    u, v = rng.normal(size=(1, 4, 3, 3)), rng.normal(size=(1, 1, 6, 6))
    ps_adj = abs(np.vdot(pixel_shuffle(Var(u), 2).value, v) - np.vdot(u, pixel_unshuffle(Var(v), 2).value))
    out["adjoint identities"] = bool(conv_adj < 1e-10 and ps_adj < 1e-12)

    p = AttnParams.init(rng, 8, 2)
    _, w_self = mhsa(Var(rng.normal(size=(2, 5, 8))), p, return_weights=True)
    _, w_cross = mhca(Var(rng.normal(size=(2, 5, 8))), Var(rng.normal(size=(2, 7, 8))), p, return_weights=True)
    out["attention row sums"] = bool(np.max(np.abs(w_self.sum(-1) - 1)) <= 1e-12
                                     and np.max(np.abs(w_cross.sum(-1) - 1)) <= 1e-12)

    params = ModelParams.init(ModelConfig(image_size=32))
    params.modab[0].alpha.value = np.array(0.0)
    img = rng.uniform(size=(2, 3, 32, 32))
    ids = rng.integers(1, VOCAB.size, size=(2, 12))
    out["alpha=0 text independence (bitwise)"] = bool(np.array_equal(
        model_forward(img, ids, params).value, model_forward(img, rng.integers(0, VOCAB.size, size=(2, 12)), params).value))

    b, d, s, n = 2, 3, 4, 24
    delta, a_mat = rng.uniform(0.05, 1.0, size=(b, d, n)), -np.exp(rng.normal(size=(d, s)))
    bt, ct, e = rng.normal(size=(b, s, n)), rng.normal(size=(b, s, n)), rng.normal(size=d)
    u1, u2 = rng.normal(size=(b, d, n)), rng.normal(size=(b, d, n))
    scan = lambda uu, cc=ct, ee=e: selective_scan(uu, delta, a_mat, bt, cc, ee).value  # noqa: E731
    moved = u1.copy()
    moved[:, :, 10] += 1.0
    out["scan causality"] = bool(np.array_equal(scan(moved)[:, :, :10], scan(u1)[:, :, :10]))
    quiet = u1.copy()
    quiet[:, :, 9:] = 0.0
    decays = True
    for si in range(s):
        pick = np.zeros((b, s, n))
        pick[:, si] = 1.0
        traj = np.abs(scan(quiet, pick, np.zeros(d))[:, :, 8:])
        decays &= bool(np.all(np.diff(traj, axis=-1) <= 1e-15))
    out["scan decay"] = decays
    out["scan linearity"] = bool(np.max(np.abs(scan(0.7 * u1 - 1.3 * u2) - (0.7 * scan(u1) - 1.3 * scan(u2)))) <= 1e-10)
    return out


def test_criterion_5_invariant_suite(announce):
    t0 = time.perf_counter()
    results = _invariants()
    elapsed = time.perf_counter() - t0
    bad = [k for k, v in results.items() if not v]
    ok = not bad and elapsed < 60
    announce(5, ok, f"{len(results) - len(bad)}/{len(results)} invariants green "
                    f"({', '.join(bad) if bad else 'all'}{' failing' if bad else ''}), {elapsed:.1f}s (< 60s)")
    assert ok


@pytest.fixture(scope="module")
def desk_run(desk_data):
    t0 = time.perf_counter()
    report, params = train(desk_config(), desk_data)
    return report, params, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_6_desk_training(announce, desk_run):
    report, _, elapsed = desk_run
    first = next((e.epoch for e in report.epochs if e.val_dice >= 0.90), None)
    ok = report.best_val_dice >= 0.90 and elapsed <= 600
    announce(6, ok, f"default config, 200 train / 50 val at H=64: best val dice {report.best_val_dice:.4f} "
                    f"at epoch {report.best_epoch} of {len(report.epochs)} (>= 0.90 within 50; first reached: "
                    f"{first or 'never'}), {elapsed:.0f}s single-threaded (<= 600s)")
    assert ok


@pytest.mark.slow
def test_criterion_7_ablation_direction(announce, desk_data):
    rows = run_ablation(desk_config(), desk_data,
                        conditions=["Complete Model", "Inference w/o Text Prompts", "Training w/o MoDAB"])
    by = {r.condition: 100 * r.dice for r in rows}
    full = by["Complete Model"]
    gap_modab = full - by["Training w/o MoDAB"]
    gap_text = full - by["Inference w/o Text Prompts"]
    ok = gap_modab >= 5 and gap_text >= 3
    ref = REFERENCE_DICE
    announce(7, ok, f"test dice: complete {full:.2f}, w/o MoDAB {by['Training w/o MoDAB']:.2f} (gap {gap_modab:.2f} >= 5), "
                    f"w/o text at inference {by['Inference w/o Text Prompts']:.2f} (gap {gap_text:.2f} >= 3); "
                    f"reference gaps {ref['Complete Model'] - ref['Training w/o MoDAB']:.2f} and "
                    f"{ref['Complete Model'] - ref['Inference w/o Text Prompts']:.2f}")
    assert ok


@pytest.mark.slow
def test_criterion_8_determinism(announce, desk_data, tmp_path):
    cfg = RunConfig().with_overrides(max_epochs=3, min_epochs=1)
    a, _ = train(cfg, desk_data, tmp_path / "a")
    b, _ = train(cfg, desk_data, tmp_path / "b")
    same_trace = a.loss_trace == b.loss_trace and [e.val_dice for e in a.epochs] == [e.val_dice for e in b.epochs]
    same_ckpt = (tmp_path / "a" / "checkpoint.seut").read_bytes() == (tmp_path / "b" / "checkpoint.seut").read_bytes()
    ok = same_trace and same_ckpt
    announce(8, ok, f"two 3-epoch default-config runs: loss traces identical {same_trace}, "
                    f"checkpoint bytes identical {same_ckpt}")
    assert ok


def test_criterion_9_format_fidelity(announce):
    rng = np.random.default_rng(9)
    tensors = {"w": rng.normal(size=(3, 4)), "s": np.array(-0.0), "odd": np.array([np.inf, np.nan, 5e-324])}
    back = decode_tensors(encode_tensors(tensors))
    tensor_ok = all(back[k].tobytes() == v.tobytes() and back[k].shape == v.shape for k, v in tensors.items())
    mask = rng.integers(0, 2, size=(7, 5)).astype(np.uint8)
    pgm_ok = np.array_equal(decode_pgm(encode_pgm(mask)), mask)

    def positioned(fn, data):
        try:
            fn(data)
        except FormatError as exc:
            return exc.offset is not None
        return False

    blob = encode_tensors(tensors)
    malformed = [
        positioned(decode_tensors, b"XXXX" + blob[4:]),
        positioned(decode_tensors, blob[:4] + struct.pack("<I", 7) + blob[8:]),
        all(positioned(decode_tensors, blob[:cut]) for cut in range(0, len(blob), 7)),
        positioned(decode_tensors, blob + b"\x01"),
        positioned(decode_pgm, b"P2\n1 1\n255\n\x00"),
        positioned(decode_pgm, b"P5\n2 2\n255\n\x00"),
        positioned(decode_pgm, b"P5\nx 2\n255\n"),
    ]
    ok = tensor_ok and pgm_ok and all(malformed)
    announce(9, ok, f"tensor roundtrip bit-exact {tensor_ok}, PGM roundtrip exact {pgm_ok}, "
                    f"{sum(malformed)}/{len(malformed)} malformed inputs rejected with byte offsets")
    assert ok
