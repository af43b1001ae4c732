from typing import Dict

import numpy as np


class Adam:
    """Adaptive moment estimation with bias correction.

    Parameters are updated in place; moment estimates are kept per parameter key.
    """

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1**self.t
        correction2 = 1.0 - b2**self.t
        for key, w in params.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(w)
                self.v[key] = np.zeros_like(w)
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
            m_hat = self.m[key] / correction1
            v_hat = self.v[key] / correction2
            w -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
