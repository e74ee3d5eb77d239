"""NSGA-III search over pruning genomes."""

from .metrics import compare_fronts, hypervolume
from .nsga3 import das_dennis, dominates, fast_nondominated_sort, select
from .search import (
    Archive, Individual, ParetoFront, SearchConfig, SearchResult, evaluate_genomes, evolve,
    next_generation, pareto_front, random_search, run_search,
)

__all__ = [
    "Archive", "Individual", "ParetoFront", "SearchConfig", "SearchResult", "compare_fronts",
    "das_dennis", "dominates", "evaluate_genomes", "evolve", "fast_nondominated_sort",
    "hypervolume", "next_generation", "pareto_front", "random_search", "run_search", "select",
]
