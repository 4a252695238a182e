"""Fast/slow channel kinetics and their averaged (aggregated) chain.

A three-state channel: states 0 and 1 exchange quickly (one fast class),
state 2 is reached slowly.  As eps -> 0 the slow exit rate from the fast
class is the stationary-weighted average of the individual exit rates.

Run: python3 demos/02_channel_averaging.py
"""

import numpy as np
from scipy.linalg import expm

from pdmpfluct.kinetics import aggregated_generator, averaged_rate, class_stationary, constant_model, two_scale_generator

q = np.array([[0.0, 4.0, 0.5], [2.0, 0.0, 1.0], [1.5, 0.0, 0.0]])
model = constant_model(q, [0, 0, 1], [0.0, 2.0, 1.0], [0.0, -40.0, 30.0])

mu = class_stationary(model, 0.0, 0)
print("quasi-stationary law inside the fast class:", np.round(mu, 6))
print("averaged exit rate:", averaged_rate(model, 0.0, 0, 1), "=", mu @ np.array([0.5, 1.0]))
agg = aggregated_generator(model, 0.0)
print("aggregated generator:\n", np.round(agg.matrix, 6))

# probability of being in the slow state at t = 1, full chain vs aggregated chain
p_agg = expm(agg.matrix * 1.0)[0, 1]
for eps in (1.0, 0.1, 0.01, 0.001):
    full = expm(two_scale_generator(model, 0.0, eps) * 1.0)
    p_full = (mu @ full[:2, :])[2]
    print(f"eps={eps:<6} P(slow state at t=1) = {p_full:.6f}   aggregated {p_agg:.6f}")
