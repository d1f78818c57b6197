"""Shared builders for randomized test graphs."""

from hybridfg import (DiscreteFactor, DiscreteKey, HybridGaussianFactor,
                      HybridGaussianFactorGraph, JacobianFactor,
                      log_normalization_constant, whiten)


def random_hybrid_graph(rng, n_cont=4, n_disc=3, with_discrete_factor=True,
                        two_var_hybrids=False):
    """A scalar chain with an anchor prior, plain between factors, and
    hybrid measurements whose modes differ in mean and noise scale.

    Every continuous variable is constrained in every mode, so all modes are
    full rank and the brute-force oracle applies.
    """
    g = HybridGaussianFactorGraph()
    xs = [f"x{i}" for i in range(n_cont)]
    g.add(whiten({xs[0]: [[1.0]]}, [rng.normal()], rng.uniform(0.5, 2.0)))
    for i in range(n_cont - 1):
        g.add(whiten({xs[i]: [[-1.0]], xs[i + 1]: [[1.0]]}, [rng.normal()],
                     rng.uniform(0.5, 2.0)))
    keys = [DiscreteKey(f"m{j}", 2) for j in range(n_disc)]
    for k in keys:
        if two_var_hybrids and n_cont >= 2 and rng.random() < 0.5:
            i = int(rng.integers(n_cont - 1))
            blocks = {xs[i]: [[-1.0]], xs[i + 1]: [[1.0]]}
        else:
            blocks = {xs[int(rng.integers(n_cont))]: [[1.0]]}
        comps = []
        for _ in range(2):
            var = rng.uniform(0.3, 3.0) ** 2
            comps.append((whiten(blocks, [rng.normal(scale=2.0)], var),
                          log_normalization_constant(var)))
        g.add(HybridGaussianFactor.from_components([k], comps))
    if with_discrete_factor and n_disc >= 1 and rng.random() < 0.5:
        k = keys[int(rng.integers(n_disc))]
        g.add(DiscreteFactor([k], rng.uniform(0.1, 1.0, size=2)))
    return g


def mixture_graph():
    """The worked single-variable mixture: prior N(0,1) on x, measurement
    z=1 explained by mode means 0 or 4 with unit measurement noise."""
    m = DiscreteKey("m", 2)
    g = HybridGaussianFactorGraph()
    g.add(JacobianFactor({"x": [[1.0]]}, [0.0]))
    c = log_normalization_constant(1.0)
    g.add(HybridGaussianFactor.from_components([m], [
        (whiten({"x": [[1.0]]}, [1.0 - 0.0], 1.0), c),
        (whiten({"x": [[1.0]]}, [1.0 - 4.0], 1.0), c),
    ]))
    return g, m


def hypothesis_chain_graph(rng, n_keys=8):
    """Chain of scalar variables whose between measurements are all
    two-mode: a 2**n_keys joint hypothesis space.

    Mode evidences are drawn with widely varying ratios so the sorted joint
    probabilities are well separated and rank cuts are unambiguous.
    """
    g = HybridGaussianFactorGraph()
    xs = [f"x{i}" for i in range(n_keys + 1)]
    g.add(whiten({xs[0]: [[1.0]]}, [0.0], 0.1))
    g.add(whiten({xs[-1]: [[1.0]]}, [float(n_keys)], 0.5))
    for i in range(n_keys):
        k = DiscreteKey(f"m{i}", 2)
        comps = []
        for mode in range(2):
            z = 1.0 + rng.uniform(0.1, 1.7) * mode + rng.normal(scale=0.3)
            var = rng.uniform(0.2, 2.5)
            comps.append((whiten({xs[i]: [[-1.0]], xs[i + 1]: [[1.0]]}, [z], var),
                          log_normalization_constant(var)))
        g.add(HybridGaussianFactor.from_components([k], comps))
    return g
