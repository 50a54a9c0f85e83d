"""Adam updates shared by GP and multi-task training."""

import numpy as np


class Adam:
    """Adam ascent on a parameter vector (maximizes the objective)."""

    def __init__(self, theta, learning_rate=0.1, beta1=0.9, beta2=0.999, eps=1e-8):
        self.theta = np.array(theta, dtype=float)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros_like(self.theta)
        self.v = np.zeros_like(self.theta)
        self.t = 0

    def step(self, grad):
        g = -np.asarray(grad, dtype=float)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        self.theta = self.theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return self.theta


def central_difference(f, theta, step=1e-4):
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        grad[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return grad
