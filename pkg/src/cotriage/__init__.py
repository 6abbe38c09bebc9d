"""cotriage: route multiple-choice questions between a single greedy
chain-of-thought answer and multi-path reasoning, based on a learned
trustworthiness score for the greedy trajectory."""

__version__ = "0.1.0"
