import time

import numpy as np
import pytest

from melstitch import corpus as corpus_mod
from melstitch import tensorcore as tc
from melstitch.stitcher import StitchModel, TrainConfig, train

# tuned desk-scale training config used by the training-dependent tests
TOY_TRAIN = TrainConfig(steps=2000, lr=2e-3, seed=0, c_m=32, c_n=32,
                        postnet_width=96, lr_decay="cosine")

# one line per acceptance criterion, echoed after the pytest summary so the
# verdicts survive output capture and land in teed logs
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite_diff_grads(make_loss, params, h=1e-5):
    """Central finite differences of make_loss() w.r.t. every param element.

    make_loss must rebuild the forward pass from the params' current data.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = make_loss()
            flat[i] = orig - h
            lo = make_loss()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_grads(make_loss_tensor, params):
    tc.zero_grads(params)
    with tc.Tape() as tape:
        loss = make_loss_tensor()
        tc.backward(loss, tape)
    return [p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in params]


def max_rel_err(analytic, fd):
    # the denominator floor turns the check into an absolute tolerance for
    # near-zero gradients, where central differences only give ~1e-11
    worst = 0.0
    for a, f in zip(analytic, fd):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-3)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


@pytest.fixture(scope="session")
def toy_setup():
    items, inventory, params = corpus_mod.make_toy_corpus(60, seed=1)
    table = corpus_mod.duration_table([it.alignment for it in items], inventory)
    return {"items": items, "inventory": inventory, "synth_params": params,
            "table": table, "config": corpus_mod.TOY_MEL_CONFIG}


@pytest.fixture(scope="session")
def trained_model(toy_setup):
    model = StitchModel.init(
        toy_setup["config"], toy_setup["inventory"], toy_setup["synth_params"],
        toy_setup["table"], c_m=TOY_TRAIN.c_m, c_n=TOY_TRAIN.c_n,
        postnet_width=TOY_TRAIN.postnet_width, seed=TOY_TRAIN.seed)
    pairs = [(it.ref_mel, it.alignment) for it in toy_setup["items"]]
    t0 = time.monotonic()
    train(TOY_TRAIN, pairs, model)
    elapsed = time.monotonic() - t0
    return {"model": model, "train_seconds": elapsed, "pairs": pairs}


@pytest.fixture(scope="session")
def heldout_pairs():
    items, _, _ = corpus_mod.make_toy_corpus(20, seed=101)
    return [(it.item_id, it.ref_mel, it.alignment) for it in items]
