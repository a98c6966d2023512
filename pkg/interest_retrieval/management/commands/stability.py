from ...pipeline import cmd_stability
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Mesure l'ARI entre clusterings d'instantanés temporels consécutifs."
    stage = 'stability'

    def run_stage(self, config, **options):
        return cmd_stability(config)
