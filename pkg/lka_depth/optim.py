"""
File: optim.py
Author: Chuncheng Zhang
Date: 2025-03-22
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    Adam and the step learning-rate schedule.

Functions:
    1. Requirements and constants
    2. Function and class
"""


# %% ---- 2025-03-22 ------------------------
# Requirements and constants
import numpy as np

from .errors import ContractError


# %% ---- 2025-03-22 ------------------------
# Function and class
class Adam(object):
    '''
    Adam with the bias correction.

    The parameters are updated in-place between the steps.
    '''

    def __init__(self, params: list, lr: float = 1e-4, betas: tuple = (0.9, 0.999),
                 eps: float = 1e-8):
        if lr <= 0:
            raise ContractError(f'lr must be positive, got {lr}')
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def step_lr(epoch: int, conf) -> float:
    '''conf.lr before conf.lr_decay_epoch (0-based epochs), conf.lr_final after.'''
    return conf.lr if epoch < conf.lr_decay_epoch else conf.lr_final
