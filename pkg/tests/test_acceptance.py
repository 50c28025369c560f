"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.  Criterion 4 trains the
default-size networks for 300 steps and takes several minutes on one core.
"""
import itertools
import json
import math
import os
import re
import time
import warnings

import numpy as np
import pytest

from conftest import TINY, tiny_config
from oracles import conv2d_loops, conv_transpose2d_loops, hand_count, mann_whitney_auc, otsu_brute_force
from vesselgan import tensor as T
from vesselgan.checkpoint import load_checkpoint, save_checkpoint
from vesselgan.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from vesselgan.config import RunConfig
from vesselgan.conv import ConvSpec, conv2d, conv_transpose2d
from vesselgan.data import ImageRecord, pad_to_multiple, unpad
from vesselgan.gradcheck import run_suite
from vesselgan.metrics import confusion, metrics, otsu_from_histogram, read_report, roc_auc
from vesselgan.netpbm import emit_netpbm, parse_netpbm
from vesselgan.objective import discriminator_loss, generator_loss
from vesselgan.pipeline import Trainer, predict, train_loop
from vesselgan.synthetic import make_fundus, write_dataset

HERE = os.path.dirname(os.path.abspath(__file__))


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = run_suite("all", samples=40, step=1e-3, tolerance=1e-4)
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for _, r in results)
    failed = [label for label, r in results if not r.passed]
    skipped = sum(len(r.skipped) for _, r in results)
    verdict(1, not failed and elapsed < 120, f"{len(results)} cases, max rel error {worst:.2e} <= 1e-4, {skipped} kink-adjacent skipped, {elapsed:.1f}s; failed={failed}")


def test_criterion_2_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    conv_worst = 0.0
    n_conv = 0
    for h, w, stride, pad, k in itertools.product(range(1, 9), range(1, 9), (1, 2), (0, 1), (1, 2, 3)):
        if h + 2 * pad >= k and w + 2 * pad >= k:
            x = rng.normal(size=(1, 2, h, w)).astype(np.float32)
            ker = rng.normal(size=(3, 2, k, k)).astype(np.float32)
            b = rng.normal(size=3).astype(np.float32)
            out = conv2d(T.Tensor(x), T.Tensor(ker), T.Tensor(b), ConvSpec(stride, pad)).data
            conv_worst = max(conv_worst, float(np.abs(out - conv2d_loops(x, ker, b, stride, pad)).max()))
            n_conv += 1
        if (h - 1) * stride - 2 * pad + k >= 1 and (w - 1) * stride - 2 * pad + k >= 1:
            x = rng.normal(size=(1, 2, h, w)).astype(np.float32)
            ker = rng.normal(size=(2, 3, k, k)).astype(np.float32)
            b = rng.normal(size=3).astype(np.float32)
            out = conv_transpose2d(T.Tensor(x), T.Tensor(ker), T.Tensor(b), ConvSpec(stride, pad)).data
            conv_worst = max(conv_worst, float(np.abs(out - conv_transpose2d_loops(x, ker, b, stride, pad)).max()))
            n_conv += 1

    auc_ok = 0
    while auc_ok < 200:
        n = int(rng.integers(2, 21))
        gt = rng.integers(0, 2, n)
        if gt.min() == gt.max():
            continue
        scores = rng.integers(0, 8, n) / 7.0
        assert roc_auc(scores, gt).auc == float(mann_whitney_auc(scores.tolist(), gt.tolist()))
        auc_ok += 1

    for _ in range(200):
        hist = np.zeros(256, int)
        support = rng.choice(256, size=int(rng.integers(1, 16)), replace=False)
        hist[support] = rng.integers(1, 60, support.size)
        assert otsu_from_histogram(hist) == otsu_brute_force(hist)

    for _ in range(200):
        n = int(rng.integers(1, 40))
        pred, gt, mask = rng.integers(0, 2, (3, n))
        mask[0] = 1
        c = confusion(pred, gt, mask)
        tp, fp, tn, fn = hand_count(pred, gt, mask)
        assert (c.tp, c.fp, c.tn, c.fn) == (tp, fp, tn, fn)
        r = metrics(c)
        assert r.acc == (tp + tn) / (tp + fp + tn + fn)
    elapsed = time.perf_counter() - t0
    verdict(2, conv_worst <= 1e-5 and elapsed < 180, f"{n_conv} conv cases max |diff| {conv_worst:.1e}; 200 AUC, 200 Otsu, 200 metric cases exact; {elapsed:.1f}s")


def test_criterion_3_loss_identities(verdict, tmp_path):
    half = T.Tensor(np.full((4, 1, 15, 15), 0.5), requires_grad=True)
    d_total = discriminator_loss(T.Tensor(np.full((4, 1, 15, 15), 0.5)), T.Tensor(np.full((4, 1, 15, 15), 0.5)))[0].item()
    y = T.Tensor(np.zeros((4, 1, 8, 8)))
    g_adv = generator_loss(half, y, y)[1].item()
    cfg = tiny_config(train__max_steps=12)
    image, label, fov = make_fundus(32, 32, seed=8)
    train_loop(cfg, out_dir=str(tmp_path), records=[ImageRecord("a", image, label, fov)])
    rows = [json.loads(line) for line in open(tmp_path / "train_log.jsonl")]
    exact = all(r["g_total"] == r["g_adv_loss"] + 10 * r["g_l1_loss"] for r in rows)
    ok = abs(d_total - 2 * math.log(2)) <= 1e-6 and abs(g_adv - math.log(2)) <= 1e-6 and exact and len(rows) == 12
    verdict(3, ok, f"blind D: d_total={d_total:.9f}, g_adv={g_adv:.9f}; g_total == g_adv + 10*g_l1 bitwise on {len(rows)} logged steps: {exact}")


def _overfit_run(out_dir, steps):
    image, label, fov = make_fundus(128, 128, seed=0)
    cfg = RunConfig()
    cfg.train.max_steps = steps
    trainer, reports = train_loop(cfg, out_dir=out_dir, records=[ImageRecord("crop", image, label, fov)])
    return trainer, reports, (image, label, fov)


def test_criterion_4_overfit_one_sample(verdict, tmp_path):
    t0 = time.perf_counter()
    trainer, reports, (image, label, fov) = _overfit_run(str(tmp_path / "full"), 300)
    prob, _ = predict(trainer.G, image, tile=128, stride=64, z_seed=0)
    auc = roc_auc(prob, label, fov).auc
    train_l1 = reports[-1].g_l1_loss
    elapsed = time.perf_counter() - t0
    # determinism: an independent rerun reproduces the logged stream bitwise (10-step prefix)
    _, again, _ = _overfit_run(str(tmp_path / "again"), 10)
    same = [json.loads(a.to_json()) | {"wall_time": 0} for a in again] == [json.loads(r.to_json()) | {"wall_time": 0} for r in reports[:10]]
    ok = train_l1 < 0.05 and auc > 0.95 and same and elapsed < 600
    verdict(4, ok, f"300 steps in {elapsed:.0f}s: training L1 {train_l1:.4f} (< 0.05), training-crop AUC {auc:.4f} (> 0.95), rerun bitwise identical: {same}")


def test_criterion_5_round_trips(verdict, tmp_path):
    rng = np.random.default_rng(5)
    pads = 0
    for h, w in [(584, 565), (37, 64), (64, 64), (3, 5)]:
        rec = ImageRecord("r", rng.integers(0, 256, (h, w, 3), dtype=np.uint8), rng.integers(0, 2, (h, w)).astype(np.uint8), np.ones((h, w), np.uint8))
        back = unpad(*pad_to_multiple(rec, 32))
        pads += np.array_equal(back.image, rec.image) and np.array_equal(back.label, rec.label) and np.array_equal(back.fov_mask, rec.fov_mask)
    netpbm = all(
        np.array_equal(parse_netpbm(emit_netpbm(img)), img)
        for img in (rng.integers(0, 256, s, dtype=np.uint8) for s in [(1, 1), (7, 3), (5, 9, 3), (64, 48, 3)])
    )
    image, label, fov = make_fundus(128, 128, seed=0)
    a, b = tmp_path / "a.vgn", tmp_path / "b.vgn"
    save_checkpoint(a, Trainer(RunConfig(), [ImageRecord("c", image, label, fov)]).checkpoint())
    save_checkpoint(b, load_checkpoint(a))
    ckpt_same = a.read_bytes() == b.read_bytes()

    recs = [ImageRecord(f"r{i}", *make_fundus(32, 32, seed=30 + i)) for i in range(2)]
    straight, _ = train_loop(tiny_config(train__max_steps=20), out_dir=str(tmp_path / "s"), records=recs)
    train_loop(tiny_config(train__max_steps=10), out_dir=str(tmp_path / "h"), records=recs)
    resumed, _ = train_loop(tiny_config(train__max_steps=20), out_dir=str(tmp_path / "r"), records=recs, resume=str(tmp_path / "h" / "final.vgn"))
    resume_same = all(
        getattr(straight, s).snapshot()[k].tobytes() == getattr(resumed, s).snapshot()[k].tobytes()
        for s in ("G", "D")
        for k in getattr(straight, s).snapshot()
    )
    ok = pads == 4 and netpbm and ckpt_same and resume_same
    verdict(5, ok, f"pad/unpad {pads}/4, NetPBM identity {netpbm}, checkpoint save/load/save bytes identical {ckpt_same}, resume 10+10 == 20 bitwise {resume_same}")


TABLE_ROW = re.compile(r"\\textbf\{Proposed\}.*?\\\\")


def _reference_row():
    with open(os.path.join(HERE, os.pardir, "paper.md")) as fh:
        row = TABLE_ROW.search(fh.read()).group(0)
    return [float(v) for v in re.findall(r"0\.\d{4}", row)]


def test_criterion_6_reference_numbers_and_replication(verdict, capsys):
    targets = {"drive": (0.9562, 0.9824, 0.7746, 0.9753), "stare": (0.9647, 0.9869, 0.7940, 0.9885)}
    row = _reference_row()
    # Table order per dataset: Acc, Sp, Se, AUC
    assert row == [*targets["drive"], *targets["stare"]]
    report = os.environ.get("VESSELGAN_DRIVE_REPORT")
    if not report:
        with capsys.disabled():
            print("\n[criterion 6] SKIP: full-scale replication is best-effort and excluded from CI; "
                  "reference numbers verified against the source table; run `make replicate-drive` to attempt AUC >= 0.90")
        pytest.skip("set VESSELGAN_DRIVE_REPORT to the report written by `make replicate-drive`")
    rows = read_report(report)
    auc = rows[-1]["auc"]
    verdict(6, auc is not None and auc >= 0.90, f"DRIVE test pooled AUC {auc} (best-effort bound 0.90; reference {targets['drive'][3]})")


def test_criterion_7_cli_contract(verdict, tmp_path):
    t0 = time.perf_counter()
    root = tmp_path / "data"
    write_dataset(str(root), n=3, h=64, w=64, seed=17)
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY + "data.train_count = 2\n")
    codes = {}
    codes["train"] = main(["train", "--config", str(cfg), "--data-root", str(root), "--out", str(tmp_path / "run")])
    for stem in ("01", "02", "03"):
        codes[f"infer {stem}"] = main(["infer", "--ckpt", str(tmp_path / "run" / "final.vgn"), "--image", str(root / "images" / f"{stem}.ppm"), "--out", str(tmp_path / "pred"), "--z-seed", "1"])
    codes["eval"] = main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(root / "labels"), "--mask", str(root / "masks"), "--report", str(tmp_path / "r.jsonl")])
    codes["gradcheck"] = main(["gradcheck", "--module", "conv"])
    bad = tmp_path / "bad.cfg"
    bad.write_text("objective.lambda = -1\n")
    codes["config error"] = main(["train", "--config", str(bad), "--data-root", str(root), "--out", str(tmp_path / "x")])
    codes["data error"] = main(["eval", "--pred", str(tmp_path / "run"), "--gt", str(root / "labels"), "--report", str(tmp_path / "r2.jsonl")])
    boom = tmp_path / "boom.cfg"
    boom.write_text(TINY + "optimizer.g.lr0 = 1e30\noptimizer.d.lr0 = 1e30\n")
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        codes["numeric abort"] = main(["train", "--config", str(boom), "--data-root", str(root), "--out", str(tmp_path / "boom")])
    expected = {k: EXIT_OK for k in codes} | {"config error": EXIT_CONFIG, "data error": EXIT_DATA, "numeric abort": EXIT_NUMERIC}
    elapsed = time.perf_counter() - t0
    verdict(7, codes == expected and elapsed < 60, f"exit codes {codes} in {elapsed:.1f}s")

