"""
AdaDelta with one pair of running averages per trainable parameter:

    E[g^2]  <- rho E[g^2] + (1 - rho) g^2
    delta   =  -sqrt(E[d^2] + eps) / sqrt(E[g^2] + eps) * g
    E[d^2]  <- rho E[d^2] + (1 - rho) delta^2
    theta   <- theta + lr * delta
"""
from dataclasses import dataclass, field
from typing import Dict

import numpy as np


@dataclass
class OptimizerState:
    # parameter name -> running average of squared gradients
    eg2: Dict[str, np.ndarray] = field(default_factory=dict)
    # parameter name -> running average of squared updates
    ed2: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        trainable = params.trainable()
        return cls(eg2={k: np.zeros_like(v) for k, v in trainable.items()},
                   ed2={k: np.zeros_like(v) for k, v in trainable.items()})


def adadelta_step(params, grads, state, config):
    """
    One update of every parameter that has a gradient. Parameters get new arrays
    (earlier copies of params are never modified); state is updated in place and returned.
    """
    rho, eps, lr = config.adadelta_rho, config.adadelta_eps, config.learning_rate
    for name, grad in grads.items():
        theta = getattr(params, name)
        if grad.shape != theta.shape:
            raise ValueError(f"gradient of {name} has shape {grad.shape} but the parameter has {theta.shape}")
        if name not in state.eg2:
            state.eg2[name] = np.zeros_like(theta)
            state.ed2[name] = np.zeros_like(theta)

        eg2 = rho * state.eg2[name] + (1.0 - rho) * np.square(grad)
        delta = -(np.sqrt(state.ed2[name] + eps) / np.sqrt(eg2 + eps)) * grad
        state.eg2[name] = eg2
        state.ed2[name] = rho * state.ed2[name] + (1.0 - rho) * np.square(delta)
        setattr(params, name, theta + lr * delta)
    state.step += 1
    return params, state


class AdaDelta:
    """Holds the running averages of one training run; pre-training and training share it."""

    def __init__(self, params, config):
        self.config = config
        self.state = OptimizerState.zeros_like(params)

    def __repr__(self):
        return (f"AdaDelta(lr={self.config.learning_rate}, rho={self.config.adadelta_rho}, "
                f"eps={self.config.adadelta_eps}, step={self.state.step})")

    def step(self, params, grads):
        params, self.state = adadelta_step(params, grads, self.state, self.config)
        return params
