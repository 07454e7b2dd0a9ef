"""Reproduction criteria, each checked at its stated tolerance.

Every criterion writes a ``[PASS]`` or ``[FAIL]`` line, repeated in the
"acceptance criteria" section at the end of the pytest run.
"""

import math
import time
import warnings

import numpy as np
import pytest

from mssal.cli import bench_table, main
from mssal.data import (
    ScenarioSpec,
    generate_scenario,
    load_banknotes,
    load_bench_data,
    load_crabs,
    read_labels,
    write_csv,
)
from mssal.distributions import ComponentParams, MixtureModel, gig_moments, mssal_log_density, sample_mixture, sample_mssal
from mssal.em import FitConfig, e_step, mm_objective, mm_rotation_update, random_partitions, run_em
from mssal.metrics import DegeneratePartitionWarning, adjusted_rand_index, cross_tab
from mssal.selection import select_model
from test_metrics import brute_ari, partitions_up_to

pytestmark = pytest.mark.slow

REFERENCE_CRABS_BIC = -771.3386


def rot(deg):
    t = math.radians(deg)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


# ------------------------------------------------------------------ crabs


@pytest.fixture(scope="module")
def crabs_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("crabs")
    x, labels = load_crabs()
    write_csv(x, d / "crabs.csv")
    t0 = time.perf_counter()
    assert main(["pca", "--data", str(d / "crabs.csv"), "--components", "1,3", "--standardize",
                 "--out", str(d / "pcs.csv")]) == 0
    code = main(["select", "--data", str(d / "pcs.csv"), "--g-min", "1", "--g-max", "5", "--starts", "50",
                 "--out", str(d / "model.json"), "--labels-out", str(d / "pred.csv")])
    elapsed = time.perf_counter() - t0
    from mssal.modelfile import load_model

    model, doc = load_model(d / "model.json")
    return dict(code=code, model=model, doc=doc, pred=read_labels(d / "pred.csv"), labels=labels, elapsed=elapsed)


def test_crabs_selects_two_components(crabs_run, criterion):
    r = crabs_run
    table = ", ".join(
        f"G={row['G']}:{row['bic']:.2f}" if row["bic"] is not None else f"G={row['G']}:-" for row in r["doc"]["selection"]
    )
    ok = criterion(
        "crabs: chosen G = 2",
        r["code"] == 0 and r["model"].n_components == 2,
        f"chosen G={r['model'].n_components}; BIC {table}; reference BIC {REFERENCE_CRABS_BIC} (qualitative)",
    )
    assert ok


def test_crabs_ari_vs_sex(crabs_run, criterion):
    r = crabs_run
    ari = adjusted_rand_index(r["labels"]["sex"], r["pred"])
    ok = criterion("crabs: ARI vs sex >= 0.96", ari >= 0.96, f"ARI={ari:.4f}")
    assert ok, "clusters on PCs 1 and 3 follow colour form, not sex (see the README)"


def test_crabs_ari_vs_species_supplementary(crabs_run, criterion):
    r = crabs_run
    ari = adjusted_rand_index(r["labels"]["sp"], r["pred"])
    tab = cross_tab(r["labels"]["sp"], r["pred"]).counts.tolist()
    assert criterion("crabs (supplementary): ARI vs colour form >= 0.96", ari >= 0.96, f"ARI={ari:.4f} table={tab}")


def test_crabs_runtime(crabs_run, criterion):
    secs = crabs_run["elapsed"]
    assert criterion("crabs: runtime < 10 min", secs < 600, f"{secs:.1f}s")


# -------------------------------------------------------------- banknotes


def test_banknotes_reproduction(criterion):
    try:
        x, status = load_banknotes()
    except FileNotFoundError as err:
        for name in ("chosen G = 2", "ARI >= 0.95", "cross-tab within one count of (99,1 / 0,100)", "runtime < 20 min"):
            criterion(f"banknotes: {name}", False, f"fixture missing: {err}")
        pytest.fail(f"banknote fixture not available: {err}")
    t0 = time.perf_counter()
    rep = select_model(x, 1, 5, FitConfig(n_starts=50))
    secs = time.perf_counter() - t0
    pred = rep.chosen.fit.map_labels
    ari = adjusted_rand_index(status, pred)
    counts = cross_tab(status, pred).counts
    # align predicted columns with the truth rows before comparing
    if counts.shape == (2, 2) and counts[0, 0] + counts[1, 1] < counts[0, 1] + counts[1, 0]:
        counts = counts[:, ::-1]
    near = counts.shape == (2, 2) and np.abs(counts - [[99, 1], [0, 100]]).max() <= 1
    results = [
        criterion("banknotes: chosen G = 2", rep.chosen_g == 2, f"G={rep.chosen_g}"),
        criterion("banknotes: ARI >= 0.95", ari >= 0.95, f"ARI={ari:.4f}"),
        criterion("banknotes: cross-tab within one count of (99,1 / 0,100)", near, str(counts.tolist())),
        criterion("banknotes: runtime < 20 min", secs < 1200, f"{secs:.1f}s"),
    ]
    assert all(results)


# -------------------------------------------------------------- scenarios


def scenario_runs(scenario):
    out = []
    for seed in range(25):
        x, truth = generate_scenario(ScenarioSpec(scenario, 100, seed))
        rep = select_model(x, 1, 3, FitConfig(n_starts=50, seed=1000 * seed))
        out.append((rep.chosen_g, adjusted_rand_index(truth, rep.chosen.fit.map_labels)))
    return out


def test_scenario_three(criterion):
    runs = scenario_runs("III")
    hits = sum(g == 2 for g, _ in runs)
    aris = np.array([a for _, a in runs])
    ok1 = criterion("scenario III: chosen G = 2 on >= 24/25", hits >= 24, f"{hits}/25")
    ok2 = criterion("scenario III: mean ARI >= 0.95", aris.mean() >= 0.95, f"{aris.mean():.4f} (sd {aris.std(ddof=1):.4f})")
    assert ok1 and ok2


def test_scenario_one(criterion):
    runs = scenario_runs("I")
    hits = sum(g == 2 for g, _ in runs)
    aris = np.array([a for _, a in runs])
    ok1 = criterion("scenario I: chosen G = 2 on 25/25", hits == 25, f"{hits}/25")
    ok2 = criterion("scenario I: mean ARI >= 0.90", aris.mean() >= 0.90, f"{aris.mean():.4f} (sd {aris.std(ddof=1):.4f})")
    assert ok1 and ok2


def test_scenario_two(criterion):
    runs = scenario_runs("II")
    aris = np.array([a for _, a in runs])
    hits = sum(g == 2 for g, _ in runs)
    ok = criterion("scenario II: mean ARI >= 0.80", aris.mean() >= 0.80,
                   f"{aris.mean():.4f} (sd {aris.std(ddof=1):.4f}); chosen G=2 on {hits}/25")
    assert ok


# ---------------------------------------------------------- property suite


def random_two_component(r):
    return MixtureModel(
        [0.5, 0.5],
        tuple(
            ComponentParams(r.normal(size=2) + shift, r.normal(size=2), rot(r.uniform(0, 180)), r.uniform(0.3, 2, 2))
            for shift in (0.0, 4.0)
        ),
    )


def test_property_em_ascent(criterion):
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        x, _ = sample_mixture(random_two_component(r), 60, r)
        cfg = FitConfig(n_starts=1, seed=seed)
        (run,) = run_em(x, random_partitions(60, 2, cfg), cfg, 2)
        if len(run["trace"]) > 1:
            worst = min(worst, float(np.diff(run["trace"]).min()))
    assert criterion("property: EM ascent within 1e-8 on 100 instances (n=60, p=2, G=2)", worst >= -1e-8,
                     f"worst step {worst:.3e}")


def test_property_mm(criterion):
    worst_rise, worst_orth = 0.0, 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        truth = ComponentParams([0, 0], r.normal(size=2), rot(r.uniform(0, 180)), r.uniform(0.2, 3, 2))
        x = sample_mssal(truth, 300, r).values
        ex, _ = e_step(x, MixtureModel([1.0], (truth,)))
        start = MixtureModel([1.0], (ComponentParams(truth.mu, truth.beta, np.eye(2), truth.a_diag),))
        trace = []
        d = mm_rotation_update(x, ex, start, truth.mu[None], truth.beta[None],
                               FitConfig(mm_max_iter=100, mm_tol=1e-12), trace)
        worst_rise = max(worst_rise, float(np.diff(np.array(trace)[:, 0]).max()))
        worst_orth = max(worst_orth, float(np.abs(d[0].T @ d[0] - np.eye(2)).max()))
    ok1 = criterion("property: MM objective non-increasing within 1e-8", worst_rise <= 1e-8, f"max rise {worst_rise:.3e}")
    ok2 = criterion("property: D orthogonality < 1e-8", worst_orth < 1e-8, f"max dev {worst_orth:.3e}")

    # rotation recovery against a brute-force angle grid
    truth = ComponentParams([0, 0], [0, 0], rot(30), [4.0, 0.25])
    x = sample_mssal(truth, 2000, np.random.default_rng(0)).values
    ex, _ = e_step(x, MixtureModel([1.0], (truth,)))
    start = MixtureModel([1.0], (ComponentParams(truth.mu, truth.beta, np.eye(2), truth.a_diag),))
    d = mm_rotation_update(x, ex, start, truth.mu[None], truth.beta[None], FitConfig(mm_max_iter=2000, mm_tol=1e-13))[0]
    grid = np.arange(0, 180, 0.05)
    vals = [mm_objective(x, ex, start, truth.mu[None], truth.beta[None], rot(t)[None])[0] for t in grid]
    best = grid[int(np.argmin(vals))]
    got = math.degrees(math.atan2(d[1, 0], d[0, 0])) % 180
    err = min(abs(got - best), 180 - abs(got - best))
    ok3 = criterion("property: p=2 rotation within 2 deg of angle-grid oracle", err < 2,
                    f"MM {got:.2f} deg, grid {best:.2f} deg, generator 30 deg")
    assert ok1 and ok2 and ok3


def test_property_gig_quadrature(oracles, criterion):
    worst = 0.0
    for d, b, ew, einv in oracles["gig_grid"]:
        m = gig_moments(d, b)
        worst = max(worst, abs(m.e_w / ew - 1), abs(m.e_inv_w / einv - 1))
    assert criterion("property: GIG moments vs quadrature rel err < 1e-6 on {0.5,1,2,5}^2", worst < 1e-6,
                     f"max rel err {worst:.2e}")


def test_property_density_normalization(criterion):
    h = 0.04
    g = np.arange(-40, 40 + h / 2, h)
    worst = 0.0
    for draw in range(10):
        r = np.random.default_rng(500 + draw)
        c = ComponentParams(r.uniform(-1, 1, 2), r.uniform(-1, 1, 2), rot(r.uniform(0, 180)), r.uniform(0.3, 2.0, 2))
        total = 0.0
        for rows in np.array_split(g, 20):
            xx, yy = np.meshgrid(g, rows)
            total += np.exp(mssal_log_density(np.column_stack([xx.ravel(), yy.ravel()]), c)).sum()
        worst = max(worst, abs(total * h * h - 1))
    assert criterion("property: 2-D density integrates to 1 +- 1e-3 (10 draws)", worst < 1e-3, f"max |err| {worst:.2e}")


def test_property_ari_brute_force(criterion):
    mismatches = checked = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneratePartitionWarning)
        for n in range(1, 8):
            parts = partitions_up_to(n)
            for a in parts:
                for b in parts:
                    checked += 1
                    mismatches += adjusted_rand_index(a, b) != brute_ari(a, b)
    assert criterion("property: ARI equals pair counting for all partitions n <= 7, <= 3 blocks", mismatches == 0,
                     f"{checked} pairs, {mismatches} mismatches")


def test_property_sampler_mean(criterion):
    c = ComponentParams([1.0, -2.0], [0.8, -0.4], rot(35), [1.2, 0.4])
    x = sample_mssal(c, 200_000, np.random.default_rng(7)).values
    se = x.std(axis=0, ddof=1) / math.sqrt(len(x))
    z = np.abs(x.mean(axis=0) - c.mean()) / se
    assert criterion("property: sampler mean within 3 SE at n=200000", bool(np.all(z < 3)), f"|z| = {np.round(z, 2)}")


# ------------------------------------------------------------------ timing


def test_timing_sweep_shape(criterion):
    rows = bench_table(load_bench_data(), [5, 10, 15, 20, 25], [1, 2, 3], 100)
    t = {(p, g): secs for p, g, _, secs, _, _ in rows}
    done = all(n == 100 for _, _, n, _, _, _ in rows)
    in_p = all(t[(p, g)] < t[(q, g)] for g in (1, 2, 3) for p, q in zip([5, 10, 15, 20], [10, 15, 20, 25]))
    in_g = all(t[(p, 1)] < t[(p, 2)] < t[(p, 3)] for p in (5, 10, 15, 20, 25))
    table = "; ".join(f"p={p}: " + "/".join(f"{t[(p, g)]:.2f}" for g in (1, 2, 3)) for p in (5, 10, 15, 20, 25))
    ok1 = criterion("timing: 100 fixed iterations completed for every (p, G)", done)
    ok2 = criterion("timing: elapsed time increasing in p for each G", in_p, table + " (s for G=1/2/3)")
    ok3 = criterion("timing: elapsed time increasing in G for each p", in_g)
    assert ok1 and ok2 and ok3
