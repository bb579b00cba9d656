"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(see conftest.py). Run just this file with ``pytest tests/test_acceptance.py``.

The end-to-end training check runs three seeds of default-configured
training and takes a long time; set ``DISTILL_GYM_QUICK=1`` to skip it.
The hydrocarbon training check is opt-in via ``DISTILL_GYM_EXTENDED=1``.
"""

import contextlib
import csv
import math
import os
import time

import numpy as np
import pytest

from distill_gym.agent import AgentConfig, Batch, SACAgent, Trainer
from distill_gym.approx import init_network
from distill_gym.cli import main as cli_main
from distill_gym.column import ColumnSpec, solve_column
from distill_gym.config import load_config
from distill_gym.economics import EconomicParams, stream_revenue, tac_from_sizing
from distill_gym.env import decode_action
from distill_gym.thermo import ATM, Stream, bubble_point, load_component_library

from test_approx import fd_check
from test_economics import ORACLE_TAC
from test_thermo import NBP
from toy_env import QuadraticToyEnv

RESULTS = {}

# training budget for the end-to-end check (the criterion allows up to 5000)
E2E_EPISODES = int(os.environ.get("DISTILL_GYM_E2E_EPISODES", "2000"))
E2E_SEEDS = (0, 1, 2)


@contextlib.contextmanager
def criterion(number, title):
    detail = {}
    start = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        if isinstance(exc, pytest.skip.Exception):
            RESULTS[number] = ("SKIP", title, str(exc))
        else:
            RESULTS[number] = ("FAIL", title, detail.get("msg", "") or repr(exc)[:200])
        raise
    RESULTS[number] = ("PASS", title, f"{detail.get('msg', '')} ({time.perf_counter() - start:.1f} s)".strip())


def pure_product_revenue(flows, recoveries, pricing, molar_masses):
    total = 0.0
    for i, (f, r) in enumerate(zip(flows, recoveries)):
        stream_flows = np.zeros(len(flows))
        stream_flows[i] = f * r
        total += stream_revenue(Stream(stream_flows, 300.0, ATM), pricing, molar_masses=molar_masses)
    return total


def test_criterion_01_btx_revenue():
    with criterion(1, "BTX revenue reconstruction within 1% of $13.17M/yr") as d:
        problem, _ = load_config("btx")
        masses = [c.molar_mass for c in problem.components]
        rev = pure_product_revenue(problem.feed.flows, [0.982, 0.997, 1.0], problem.pricing, masses)
        # hand arithmetic: mol/s * kg/mol * 3600 s/h * 8000 h/yr / 1000 kg/t * $/t
        hand = sum(f * r * m * 3600 * 8000 / 1000 * p for f, r, m, p in zip([3.35] * 3, [0.982, 0.997, 1.0], masses, [488, 488, 510]))
        d["msg"] = f"${rev / 1e6:.3f}M/yr"
        assert rev == pytest.approx(hand, rel=1e-12)
        assert rev == pytest.approx(13.17e6, rel=0.01)


def test_criterion_02_hydrocarbon_revenue():
    with criterion(2, "hydrocarbon revenue reconstruction within 2% of $1588M/yr") as d:
        problem, _ = load_config("hydrocarbon")
        masses = [c.molar_mass for c in problem.components]
        recoveries = [0.0, 0.989, 0.973, 0.911, 0.996, 0.970]
        rev = pure_product_revenue(problem.feed.flows, recoveries, problem.pricing, masses)
        d["msg"] = f"${rev / 1e6:.1f}M/yr"
        assert rev == pytest.approx(1588e6, rel=0.02)


def test_criterion_03_tac_properties():
    with criterion(3, "TAC positive, monotone, matches spreadsheet oracle") as d:
        p = EconomicParams()
        base = dict(diameter=1.0, height=22.0, n_stages=30, condenser_duty=1e6, reboiler_duty=1e6, t_condenser=353.25)
        t0 = tac_from_sizing(**base, params=p)
        assert t0 > 0
        for key, bumped in (("n_stages", 40), ("condenser_duty", 2e6), ("reboiler_duty", 2e6)):
            assert tac_from_sizing(**{**base, key: bumped}, params=p) > t0
        assert t0 == pytest.approx(ORACLE_TAC, rel=1e-12)
        d["msg"] = f"oracle TAC ${t0:,.0f}/yr"


def test_criterion_04_normal_boiling_points():
    with criterion(4, "nine components reproduce normal boiling points within 1.5 K") as d:
        lib = load_component_library()
        worst = 0.0
        for name, tb in NBP.items():
            t, _ = bubble_point([lib[name]], [1.0], ATM)
            worst = max(worst, abs(t - tb))
        d["msg"] = f"max |dT| = {worst:.3f} K"
        assert len(NBP) == 9
        assert worst <= 1.5


def test_criterion_05_column_conservation():
    with criterion(5, "200 random converged column solves conserve mass to 1e-8") as d:
        rng = np.random.default_rng(2024)
        worst = 0.0
        solved = 0
        attempts = 0
        for name in ("btx", "hydrocarbon"):
            problem, _ = load_config(name)
            count = 0
            while count < 100:
                attempts += 1
                assert attempts < 1000, "too many unconverged random columns"
                spec = decode_action(rng.uniform(-1, 1, 4), problem.action_bounds)
                res = solve_column(problem.components, problem.feed, spec)
                if not res.converged:
                    continue
                count += 1
                closure = np.abs(res.distillate.flows + res.bottoms.flows - problem.feed.flows) / problem.feed.flows
                worst = max(worst, float(closure.max()))
                assert res.reboiler_temperature >= res.condenser_temperature
            solved += count
        d["msg"] = f"{solved} solves out of {attempts} attempts, worst closure {worst:.1e}"
        assert worst <= 1e-8


def test_criterion_06_fenske():
    with criterion(6, "binary column within x/÷3 of the Fenske estimate") as d:
        lib = load_component_library()
        pair = [lib["benzene"], lib["toluene"]]
        n = 20
        res = solve_column(pair, Stream([5.0, 5.0], 298.15, ATM), ColumnSpec(ATM, n, 100.0, 100.0))
        assert res.converged, res.message
        dist, bot = res.distillate.flows, res.bottoms.flows
        sep = (dist[0] / bot[0]) * (bot[1] / dist[1])

        def alpha(t):
            a, b = pair
            return 10 ** (a.antoine_a - a.antoine_b / (t + a.antoine_c)) / 10 ** (b.antoine_a - b.antoine_b / (t + b.antoine_c))

        fenske = math.sqrt(alpha(res.condenser_temperature) * alpha(res.reboiler_temperature)) ** (n + 1)
        d["msg"] = f"ratio {sep / fenske:.3f}"
        assert fenske / 3 <= sep <= 3 * fenske


def test_criterion_07_gradient_exactness():
    with criterion(7, "backprop matches finite differences, rel err < 1e-4") as d:
        worst = fd_check([10, 64, 64, 4], np.random.default_rng(7), 100)
        rng = np.random.default_rng(8)
        for _ in range(5):
            sizes = [int(rng.integers(1, 11)), int(rng.integers(1, 65)), int(rng.integers(1, 65)), int(rng.integers(1, 5))]
            worst = max(worst, fd_check(sizes, rng, 100))
        d["msg"] = f"max rel err {worst:.1e}"
        assert worst < 1e-4


def test_criterion_08_toy_agent():
    with criterion(8, "toy quadratic: evaluate a1 in [0.2, 0.4] after 2000 steps, 3/3 seeds") as d:
        found = []
        for seed in range(3):
            trainer = Trainer(QuadraticToyEnv(), AgentConfig(), seed)
            # one decision per episode; declines count as steps but store no transition
            trainer.run(2000)
            assert trainer.summary.steps == 2000
            decision = trainer.agent.select_action(np.array([1.0, 0.0, 0.0]), "evaluate")
            found.append(float(decision.action[0]))
        d["msg"] = "a1 = " + ", ".join(f"{a:.3f}" for a in found)
        assert all(0.2 <= a <= 0.4 for a in found)


def test_criterion_09_target_clamp():
    with criterion(9, "compute_target y >= r on 10^4 fuzzed cases") as d:
        rng = np.random.default_rng(9)
        agent = SACAgent(5, 4, AgentConfig(hidden_sizes=(16, 16)), seed=9, value_weights=[1.0, 1.0, 1.0])
        cases = 0
        for _ in range(100):
            n = 100
            # random critic targets so that soft values take both signs
            agent.targets = [init_network([9, 16, 16, 1], rng) for _ in range(2)]
            for net in agent.targets:
                net.biases[-1][:] = rng.normal(scale=3.0)
            batch = Batch(
                rng.uniform(0, 1, (n, 5)),
                rng.uniform(-1, 1, (n, 4)),
                rng.normal(scale=2.0, size=n),
                rng.uniform(0, 1, (n, 5)),
                rng.random(n) < 0.7,
                rng.uniform(0, 1, (n, 5)),
                rng.random(n) < 0.7,
            )
            y = agent.compute_target(batch, alpha=float(rng.uniform(0, 2)), gamma=float(rng.uniform(1e-3, 1)))
            assert np.all(y >= batch.rewards)
            cases += n
        d["msg"] = f"{cases} cases"
        assert cases == 10_000


def e2e_outcome(run_dir):
    with open(run_dir / "train_log.csv", newline="") as fh:
        returns = [float(r["return"]) for r in csv.DictReader(fh)]
    from distill_gym.flowsheet import parse_flowsheet

    fs = parse_flowsheet((run_dir / "best.json").read_text())
    k = max(1, len(returns) // 10)
    rec = fs.recoveries()
    purities_ok = all(
        leaf.stream.composition.max() >= 0.95 for leaf in fs.leaves() if leaf.label == "product"
    )
    return {
        "episodes": len(returns),
        "first": float(np.mean(returns[:k])),
        "last": float(np.mean(returns[-k:])),
        "recoveries": rec,
        "design_ok": bool(purities_ok and np.all(rec >= 0.90)),
    }


@pytest.mark.skipif(os.environ.get("DISTILL_GYM_QUICK") == "1", reason="DISTILL_GYM_QUICK=1 skips long training")
def test_criterion_10_btx_training(tmp_path):
    with criterion(10, f"BTX training, 3 seeds x {E2E_EPISODES} episodes: >=2 seeds reach 95%/90% and improve") as d:
        assert E2E_EPISODES <= 5000
        outcomes = []
        for seed in E2E_SEEDS:
            out = tmp_path / f"seed_{seed}"
            assert cli_main(["train", "--problem", "btx", "--episodes", str(E2E_EPISODES), "--seed", str(seed), "--out", str(out), "--log-every", "0"]) == 0
            outcomes.append(e2e_outcome(out))
        good = [o["design_ok"] and o["last"] > o["first"] for o in outcomes]
        d["msg"] = "; ".join(
            f"seed {s}: rec {np.round(o['recoveries'], 3).tolist()} first {o['first']:.3f} last {o['last']:.3f}"
            for s, o in zip(E2E_SEEDS, outcomes)
        )
        print(d["msg"])
        assert sum(good) >= 2, d["msg"]


@pytest.mark.skipif(os.environ.get("DISTILL_GYM_EXTENDED") != "1", reason="set DISTILL_GYM_EXTENDED=1 for the hours-long hydrocarbon run")
def test_criterion_11_hydrocarbon_training(tmp_path):
    with criterion(11, "hydrocarbon training recovers >= 4 of 6 components as products") as d:
        episodes = int(os.environ.get("DISTILL_GYM_EXTENDED_EPISODES", "5000"))
        assert cli_main(["train", "--problem", "hydrocarbon", "--episodes", str(episodes), "--seed", "0", "--out", str(tmp_path), "--log-every", "0"]) == 0
        from distill_gym.flowsheet import parse_flowsheet

        fs = parse_flowsheet((tmp_path / "best.json").read_text())
        produced = {int(np.argmax(leaf.stream.flows)) for leaf in fs.leaves() if leaf.label == "product"}
        d["msg"] = f"{len(produced)} components as products, recoveries {np.round(fs.recoveries(), 3).tolist()}"
        assert len(produced) >= 4


def test_criterion_12_determinism(tmp_path):
    with criterion(12, "identical seeds give identical train_log.csv (minus wall_ms) and best.json") as d:
        logs = []
        bests = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert cli_main(["train", "--problem", "btx", "--episodes", "60", "--seed", "3", "--out", str(out), "--log-every", "0"]) == 0
            with open(out / "train_log.csv", newline="") as fh:
                logs.append([{k: v for k, v in row.items() if k != "wall_ms"} for row in csv.DictReader(fh)])
            bests.append((out / "best.json").read_bytes())
        d["msg"] = f"{len(logs[0])} rows compared"
        assert len(logs[0]) == 60
        assert logs[0] == logs[1]
        assert bests[0] == bests[1]
