"""Shipped search parameter sets and config-file loading.

The five default sets are the published best-performing combinations of error
cost variant, cost weights and rewrite-rule probabilities; a params file may
define any number of additional sets.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .search import ChainConfig, CostWeights, ErrorCostConfig, ProposalProbabilities

PARAM_SETS = {
    "set1": dict(diff_kind="abs", c_kind="full", alpha=0.5, beta=5.0,
                 prob_ir=0.2, prob_or=0.4, prob_nr=0.15, prob_me1=0.2,
                 prob_me2=0.0, prob_cir=0.05),
    "set2": dict(diff_kind="pop", c_kind="full", alpha=0.5, beta=5.0,
                 prob_ir=0.17, prob_or=0.33, prob_nr=0.15, prob_me1=0.17,
                 prob_me2=0.0, prob_cir=0.18),
    "set3": dict(diff_kind="pop", c_kind="full", alpha=0.5, beta=5.0,
                 prob_ir=0.2, prob_or=0.4, prob_nr=0.15, prob_me1=0.2,
                 prob_me2=0.0, prob_cir=0.05),
    "set4": dict(diff_kind="abs", c_kind="full", alpha=0.5, beta=5.0,
                 prob_ir=0.17, prob_or=0.33, prob_nr=0.15, prob_me1=0.0,
                 prob_me2=0.17, prob_cir=0.18),
    "set5": dict(diff_kind="abs", c_kind="avg", alpha=0.5, beta=1.5,
                 prob_ir=0.17, prob_or=0.33, prob_nr=0.15, prob_me1=0.0,
                 prob_me2=0.17, prob_cir=0.18),
}

DEFAULTS = dict(gamma=1.0, err_max=1e6, mh_beta=1.0,
                num_tests_kind="incorrect", num_tests=32)


def make_chain_config(name, params, *, seed, budget_iters, budget_secs=None,
                      perf_goal="inst", window_mode=False, num_tests=None,
                      solver_timeout_ms=10_000, opts=None) -> ChainConfig:
    from .vcgen import OptFlags

    p = {**DEFAULTS, **params}
    kwargs = dict(
        probabilities=ProposalProbabilities(
            prob_ir=p["prob_ir"], prob_or=p["prob_or"], prob_nr=p["prob_nr"],
            prob_me1=p["prob_me1"], prob_me2=p["prob_me2"], prob_cir=p["prob_cir"]),
        error=ErrorCostConfig(diff_kind=p["diff_kind"], c_kind=p["c_kind"],
                              num_tests_kind=p["num_tests_kind"]),
        weights=CostWeights(alpha=p["alpha"], beta=p["beta"], gamma=p["gamma"],
                            err_max=p["err_max"], mh_beta=p["mh_beta"]),
        perf_goal=perf_goal, seed=seed, budget_iters=budget_iters,
        budget_secs=budget_secs, window_mode=window_mode,
        num_tests=num_tests if num_tests is not None else p["num_tests"],
        solver_timeout_ms=solver_timeout_ms, name=name,
    )
    if opts is not None:
        kwargs["opts"] = opts
    return ChainConfig(**kwargs)


def load_param_sets(path=None) -> dict:
    """Named parameter sets: the shipped five, or the contents of a YAML
    params file ({name: {field: value, ...}, ...})."""
    if path is None:
        return dict(PARAM_SETS)
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    out = {}
    for name, params in data.items():
        out[str(name)] = {**PARAM_SETS.get(str(name), {}), **(params or {})}
    return out


def default_chain_configs(*, seed=1, budget_iters=200_000, budget_secs=None,
                          perf_goal="inst", window_mode=False,
                          params_path=None, solver_timeout_ms=10_000,
                          num_tests=None, opts=None):
    sets = load_param_sets(params_path)
    return [make_chain_config(name, params, seed=seed + i,
                              budget_iters=budget_iters, budget_secs=budget_secs,
                              perf_goal=perf_goal, window_mode=window_mode,
                              solver_timeout_ms=solver_timeout_ms,
                              num_tests=num_tests, opts=opts)
            for i, (name, params) in enumerate(sorted(sets.items()))]


def default_latency_table_path() -> Path:
    return Path(__file__).parent / "data" / "latency_table.yaml"
