"""
haarboost

haarboost trains AdaBoost classifiers over Haar rectangle features and
spreads the per-round search for the best weak classifier over threads
on one machine or over a tree of master, sub-master and worker
processes on many machines. Every strategy produces the same model,
bit for bit.

Examples:
    Train five rounds on a synthetic dataset with four threads:

    >>> from haarboost import boosting, dataset, engine
    >>> data = dataset.synth(seed=7, l=50, m=50)
    >>> with engine.ParallelExecutor(data, worker_budget=4) as executor:
    ...     model = boosting.train(data, rounds=5, executor=executor)
    >>> len(model.rounds)
    5

    The same model is obtained with the sequential reference:

    >>> boosting.train(data, rounds=5) == model
    True

Notes:
    Documentation is available as docstrings provided with the code
    and as usage and reference documentation under ``docs/``.
"""

__version__ = "0.1.0"
