"""Supervised-only vs CSE on the synthetic toy split (4 labeled, 36 unlabeled, 10 test).

Usage: python3 demos/toy_compare.py [iterations] [seed]
The acceptance run uses 2000 iterations and seeds 0-2.
"""
import sys
import time

from lightunetr.experiment import ToySetup, run_toy, toy_dataset

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

setup = ToySetup()
dataset = toy_dataset(setup)
for semi in (False, True):
    start = time.time()
    result = run_toy(seed, semi, iterations, setup, dataset=dataset)
    name = "CSE" if semi else "supervised"
    last = result.trace[-1]
    print(f"{name:10s} {result.report.summary()}  final L_sup={last.l_sup:.4f}  {time.time() - start:.0f}s")
