"""
File: timer.py
Author: Chuncheng Zhang
Date: 2025-03-22
Copyright & Email: chuncheng.zhang@ia.ac.cn

Purpose:
    The step timer of the training loop, reports the step rate every few seconds.

Functions:
    1. Requirements and constants
    2. Function and class
    3. Play ground
    4. Pending
    5. Pending
"""


# %% ---- 2025-03-22 ------------------------
# Requirements and constants
import time
from loguru import logger


# %% ---- 2025-03-22 ------------------------
# Function and class
class StepTimer(object):
    tic = time.time()
    steps = 0  # How many steps
    auto_report_step = 10  # seconds between each auto report
    auto_report_passed = 0  # seconds on the next auto report
    name = 'train'

    def __init__(self, name=None, auto_report_step=None):
        if name:
            self.name = name
        if auto_report_step:
            self.auto_report_step = auto_report_step
        self.reset()

    def step(self):
        '''
        Count the step.

        Returns:
            - steps: How many steps are passed.
            - step_rate: The steps per second since reset.
        '''
        self.steps += 1
        passed = self.get()
        step_rate = self.steps / passed if passed > 0 else 0

        if passed > self.auto_report_passed:
            self.auto_report_passed += self.auto_report_step
            logger.debug(
                f'{self.name}: Step rate: {step_rate:0.2f}/s, Passed: {passed:0.2f} seconds')

        return self.steps, step_rate

    def get(self):
        '''
        Get the passed time in seconds.
        '''
        return time.time() - self.tic

    def reset(self):
        '''
        Reset the timer and start it *IMMEDIATELY*.
        '''
        self.tic = time.time()
        self.steps = 0
        self.auto_report_passed = self.auto_report_step


# %% ---- 2025-03-22 ------------------------
# Play ground
if __name__ == '__main__':
    timer = StepTimer('demo', 0.1)
    for _ in range(5):
        time.sleep(0.05)
        timer.step()


# %% ---- 2025-03-22 ------------------------
# Pending
