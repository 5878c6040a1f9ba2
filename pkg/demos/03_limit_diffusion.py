"""The heavy-traffic limit: reflected diffusions on the orthant.

For a critically loaded network the diffusion-scaled queue converges to
a semimartingale reflected in the orthant, with drift a(x) from the
sqrt(n)-scale rate perturbations and a covariance assembled from the
primitive variabilities and the routing matrix.  This script builds the
covariance for the unit-rate exponential tandem, samples the reflected
Brownian limit, and then adds a state-dependent drift to produce a
reflected Ornstein-Uhlenbeck process.
"""

import math

import numpy as np

from heavyq.limits import (
    JacksonParams,
    LimitSpec,
    build_covariance,
    build_limit_martingale_path,
    sample_reflected_marginals,
)

P = np.array([[0.0, 1.0], [0.0, 0.0]])
params = JacksonParams(
    arrival_rates=[1.0, 1.0], arrival_variances=[1.0, 0.0],
    service_rates=[1.0, 1.0], service_variances=[1.0, 1.0],
    arrival_speed0=[1.0, 0.0], service_speed0=[1.0, 1.0],
    routing=P, arrival_stations=frozenset({0}),
)
cov = build_covariance(params)
print("tandem covariance matrix:")
print(cov.matrix)

# zero drift at criticality: the limit is an RBM started at the origin
spec = LimitSpec(initial=np.zeros(2), drift=None, noise=cov)
samples = sample_reflected_marginals(spec, P, [1.0], horizon=1.0, dt=1e-3,
                                     n_paths=20_000, seed=90)
x1 = samples[:, 0, :]
print("RBM mean at t=1:", np.round(x1.mean(axis=0), 4),
      " (station 1 target 2/sqrt(pi) =", round(2 / math.sqrt(math.pi), 4), ")")
print("RBM covariance at t=1:")
print(np.round(np.cov(x1.T), 3))

# one martingale path, for plotting or coupling experiments
path = build_limit_martingale_path(params, horizon=1.0, dt=1e-3, seed=7)
print("martingale path: ", len(path.grid), "points, M(1) =", np.round(path.values[-1], 4))

# a mean-reverting drift turns the limit into a reflected OU process
ou = LimitSpec(initial=np.zeros(1), drift=lambda x: -x,
               noise=build_covariance(JacksonParams(
                   arrival_rates=[1.0], arrival_variances=[1.0],
                   service_rates=[1.0], service_variances=[1.0],
                   arrival_speed0=[1.0], service_speed0=[1.0],
                   routing=np.zeros((1, 1)), arrival_stations=frozenset({0}))))
ou_samples = sample_reflected_marginals(ou, np.zeros((1, 1)), [1.0, 4.0],
                                        horizon=4.0, dt=1e-3,
                                        n_paths=20_000, seed=91)
print("reflected OU mean at t=1:", round(float(ou_samples[:, 0, 0].mean()), 4))
print("reflected OU mean at t=4:", round(float(ou_samples[:, 1, 0].mean()), 4),
      " (stationary half-normal mean =", round(math.sqrt(2 / math.pi), 4), ")")
