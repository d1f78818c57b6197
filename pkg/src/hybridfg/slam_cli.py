"""Streaming hybrid SLAM solver.

Ingests a dataset of (possibly ambiguous) odometry and switchable loop
closures, runs a scheduled eliminate/prune/dead-mode-removal loop, and
writes the trajectory, mode decisions, per-update timing, and the history of
MAP estimates.

Exit codes: 0 success, 1 solver error, 2 I/O or input format error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .dataset import (DatasetEntry, DatasetParseError, LoopClosure, Odometry,
                      parse_dataset)
from .discrete import DecisionTree, DiscreteFactor, DiscreteKey
from .elimination import (dead_mode_removal, discrete_marginals,
                          hypothesis_support, max_product, prune_bayes_net,
                          restrict_to_support, strong_ordering, sum_product)
from .hybrid import HybridBayesNet
from .nonlinear import (BetweenResidual, HybridNonlinearFactor,
                        HybridNonlinearFactorGraph, NonlinearFactor,
                        OptimizationDiverged, OptimizeConfig, Pose2,
                        PriorResidual, compose, retract_values)

log = logging.getLogger("hybridfg")

ANCHOR_SIGMA = 1e-4
LOOSE_LOOP_VARIANCE = 10.0

PARSERS = {"custom": parse_dataset}


@dataclass
class RunConfig:
    prune_p: int = 10
    dmr_delta: float = 0.8
    elim_every: int = 3
    relin_every: int = 10
    max_steps: int = 0          # 0 = whole dataset
    seed: int = 0
    output_dir: str = "."

    def __post_init__(self):
        if self.prune_p < 1:
            raise ValueError("prune_p must be >= 1")
        if not (0.5 < self.dmr_delta <= 1.0):
            raise ValueError("dmr_delta must be in (0.5, 1]")
        if self.elim_every < 1 or self.relin_every < 1:
            raise ValueError("schedule constants must be >= 1")


def _sigma_diag(sigma_xy: float, sigma_theta: float) -> np.ndarray:
    return np.array([sigma_xy ** 2, sigma_xy ** 2, sigma_theta ** 2])


def build_motion_factor(entry: Odometry, index: int):
    """Hybrid between-factor whose mode picks the odometry hypothesis; a
    single hypothesis degenerates to a plain between-factor."""
    i, j = ("x", entry.frm), ("x", entry.to)
    sigma = _sigma_diag(entry.sigma_xy, entry.sigma_theta)
    residuals = [BetweenResidual(i, j, Pose2(*h)) for h in entry.hypotheses]
    if len(residuals) == 1:
        return NonlinearFactor(residuals[0], sigma)
    key = DiscreteKey(("m", index), len(residuals))
    return HybridNonlinearFactor.from_components(
        [key], [(r, sigma) for r in residuals])


def build_loop_factor(entry: LoopClosure, index: int) -> HybridNonlinearFactor:
    """Switchable loop closure: mode 1 uses the measurement covariance, mode
    0 swaps in a loose isotropic covariance so the constraint can switch off."""
    i, j = ("x", entry.frm), ("x", entry.to)
    residual = BetweenResidual(i, j, Pose2(entry.dx, entry.dy, entry.dtheta))
    key = DiscreteKey(("l", index), 2)
    tight = _sigma_diag(entry.sigma_xy, entry.sigma_theta)
    loose = np.full(3, LOOSE_LOOP_VARIANCE)
    return HybridNonlinearFactor.from_components(
        [key], [(residual, loose), (residual, tight)])


@dataclass
class RunResults:
    values: Dict[Any, Pose2]
    bn: Optional[HybridBayesNet]
    assignment: Dict[Any, int]
    fixed: Dict[Any, int]
    marginals: Dict[Any, np.ndarray]
    timings: List[Tuple[int, int, int, float]]
    history: List[Tuple[int, int, float, float, float]]
    num_factors: int


class _Runner:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.graph = HybridNonlinearFactorGraph()
        self.values: Dict[Any, Pose2] = {("x", 0): Pose2()}
        self.graph.add(NonlinearFactor(PriorResidual(("x", 0), Pose2()),
                                       _sigma_diag(ANCHOR_SIGMA, ANCHOR_SIGMA)))
        self.support: Optional[DecisionTree] = None
        self.fixed: Dict[Any, int] = {}
        self.assignment: Dict[Any, int] = {}
        self.hybrid_count = 0
        self.elim_count = 0
        self.timings: List[Tuple[int, int, int, float]] = []
        self.history: List[Tuple[int, int, float, float, float]] = []
        self.bn: Optional[HybridBayesNet] = None

    def _num_factors(self) -> int:
        return (len(self.graph.nonlinear_factors) + len(self.graph.hybrid_factors)
                + len(self.graph.discrete_factors))

    def add_entry(self, entry: DatasetEntry, index: int):
        if isinstance(entry, Odometry):
            frm, to = ("x", entry.frm), ("x", entry.to)
            if frm not in self.values:
                raise ValueError(f"odometry from unknown pose {entry.frm}")
            if to not in self.values:
                self.values[to] = compose(self.values[frm],
                                          Pose2(*entry.hypotheses[0]))
            factor = build_motion_factor(entry, index)
            self.graph.add(factor)
            if isinstance(factor, HybridNonlinearFactor):
                self.hybrid_count += 1
                return True
            return False
        factor = build_loop_factor(entry, index)
        self.graph.add(factor)
        self.hybrid_count += 1
        return True

    def _eliminate_once(self):
        lin = self.graph.linearize(self.values)
        if self.support is not None and self.support.keys:
            lin = restrict_to_support(lin, self.support)
        ordering = strong_ordering(lin)
        bn = sum_product(lin, ordering)
        bn = prune_bayes_net(bn, self.cfg.prune_p)
        self.support = hypothesis_support(bn)
        if self.support is not None and self.support.keys:
            lin = restrict_to_support(self.graph.linearize(self.values),
                                      self.support)
        step = max_product(lin, ordering)
        self.values = retract_values(self.values, step.continuous)
        self.assignment = dict(step.discrete)
        self.bn = bn
        return bn

    def elimination_pass(self):
        self.elim_count += 1
        t0 = time.perf_counter()
        bn = self._eliminate_once()
        if self.elim_count % self.cfg.relin_every == 0:
            self._dmr_and_relinearize(bn)
        millis = (time.perf_counter() - t0) * 1000.0
        joint = self.bn.discrete_joint() if self.bn is not None else None
        hyps = int(np.count_nonzero(np.asarray(joint.leaves))) if joint is not None else 1
        self.timings.append((self.elim_count, self._num_factors(), hyps, millis))
        for (kind, k) in sorted(self.values):
            p = self.values[(kind, k)]
            self.history.append((self.elim_count, k, p.x, p.y, p.theta))
        log.info("elimination %d: %d factors, %d live hypotheses, %.1f ms",
                 self.elim_count, self._num_factors(), hyps, millis)

    def _dmr_and_relinearize(self, bn: HybridBayesNet):
        self.graph, newly = dead_mode_removal(bn, self.graph, self.cfg.dmr_delta)
        if newly:
            log.info("dead mode removal fixed %s", newly)
            self.fixed.update(newly)
            if self.support is not None:
                picked = {kid: v for kid, v in newly.items()
                          if any(k.id == kid for k in self.support.keys)}
                if picked:
                    self.support = self.support.choose(picked)
        # Re-linearize and run a full batch pass at the restricted graph.
        self._eliminate_once()

    def finalize(self):
        """Final batch: optimize to convergence with pruning and DMR."""
        graph = self.graph
        if self.support is not None and self.support.keys:
            graph = HybridNonlinearFactorGraph()
            graph.nonlinear_factors = list(self.graph.nonlinear_factors)
            graph.hybrid_factors = list(self.graph.hybrid_factors)
            graph.discrete_factors = list(self.graph.discrete_factors)
            graph.discrete_factors.append(
                DiscreteFactor(self.support.keys, self.support))
        cfg = OptimizeConfig(tol=1e-9, max_iters=15, prune=self.cfg.prune_p,
                             dmr_delta=self.cfg.dmr_delta)
        try:
            from .nonlinear import optimize
            estimate, bn = optimize(graph, self.values, cfg)
            self.values = estimate.continuous
            self.assignment = {k: v for k, v in estimate.discrete.items()}
            self.bn = bn
            # Modes absent from the final net were fixed by dead mode removal.
            live = {k.id for k in bn.discrete_keys()}
            self.fixed.update({k: v for k, v in estimate.discrete.items()
                               if k not in live})
        except OptimizationDiverged as e:
            log.warning("final optimization diverged; keeping best iterate")
            self.values = e.best_values
            self.assignment = dict(e.best_assignment)
        self.assignment.update(self.fixed)

    def results(self) -> RunResults:
        marg = discrete_marginals(self.bn) if self.bn is not None else {}
        return RunResults(values=dict(self.values), bn=self.bn,
                          assignment=dict(self.assignment),
                          fixed=dict(self.fixed), marginals=marg,
                          timings=list(self.timings), history=list(self.history),
                          num_factors=self._num_factors())


def run(config: RunConfig, entries: List[DatasetEntry]) -> RunResults:
    runner = _Runner(config)
    limit = config.max_steps if config.max_steps > 0 else len(entries)
    for index, entry in enumerate(entries[:limit]):
        added_hybrid = runner.add_entry(entry, index)
        if added_hybrid and runner.hybrid_count % config.elim_every == 0:
            runner.elimination_pass()
    runner.finalize()
    return runner.results()


def _format_key(kid) -> str:
    if isinstance(kid, tuple) and len(kid) == 2:
        return f"{kid[0]}{kid[1]}"
    return str(kid)


def emit_results(results: RunResults, outdir: str):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "trajectory.txt"), "w", encoding="utf-8") as fh:
        for (_, k) in sorted(results.values):
            p = results.values[("x", k)]
            fh.write(f"POSE {k} {p.x:.9f} {p.y:.9f} {p.theta:.9f}\n")
    with open(os.path.join(outdir, "modes.txt"), "w", encoding="utf-8") as fh:
        keys = sorted(set(results.assignment) | set(results.fixed)
                      | set(results.marginals))
        for kid in keys:
            if kid in results.fixed:
                val, prob = results.fixed[kid], 1.0
            else:
                val = results.assignment.get(kid, 0)
                m = results.marginals.get(kid)
                prob = float(m[val]) if m is not None else 1.0
            fh.write(f"MODE {_format_key(kid)} {val} {prob:.9f}\n")
    with open(os.path.join(outdir, "timing.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "num_factors", "num_hypotheses", "millis"])
        for step, nf, nh, ms in results.timings:
            w.writerow([step, nf, nh, f"{ms:.3f}"])
    with open(os.path.join(outdir, "history.txt"), "w", encoding="utf-8") as fh:
        for step, k, x, y, theta in results.history:
            fh.write(f"HIST {step} {k} {x:.9f} {y:.9f} {theta:.9f}\n")


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="hybridfg-slam",
        description="Hybrid pose-graph SLAM with ambiguous odometry and "
                    "switchable loop closures.")
    p.add_argument("--input", required=True, help="dataset file")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--prune", type=int, default=10,
                   help="hypotheses kept per pruning pass (default 10)")
    p.add_argument("--dmr-delta", type=float, default=0.8,
                   help="dead-mode-removal marginal threshold (default 0.8)")
    p.add_argument("--elim-every", type=int, default=3,
                   help="hybrid factors per elimination (default 3)")
    p.add_argument("--relin-every", type=int, default=10,
                   help="eliminations per relinearize+batch (default 10)")
    p.add_argument("--max-steps", type=int, default=0,
                   help="dataset entries to ingest (0 = all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=sorted(PARSERS), default="custom")
    args = p.parse_args(argv)

    level = os.environ.get("HYBRIDFG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        entries = PARSERS[args.format](args.input)
    except (OSError, DatasetParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    config = RunConfig(prune_p=args.prune, dmr_delta=args.dmr_delta,
                       elim_every=args.elim_every, relin_every=args.relin_every,
                       max_steps=args.max_steps, seed=args.seed,
                       output_dir=args.output)
    try:
        results = run(config, entries)
    except (OptimizationDiverged, ValueError, RuntimeError, np.linalg.LinAlgError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 1
    try:
        emit_results(results, args.output)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
