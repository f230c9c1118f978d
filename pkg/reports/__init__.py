from .result_view import ResultView, estimate_view, fmt
from .writers import ArtifactWriter, read_json, read_vector
from .acceptance import CriterionResult, acceptance_view, all_passed, fkn_crosscheck, reproduce_all

__all__ = ['ResultView', 'estimate_view', 'fmt', 'ArtifactWriter', 'read_json', 'read_vector',
           'CriterionResult', 'acceptance_view', 'all_passed', 'fkn_crosscheck', 'reproduce_all']
