from ...pipeline import cmd_interest
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Calcule le profil d'intérêt η de chaque utilisateur (PPR ou comptages)."
    stage = 'interest'

    def run_stage(self, config, **options):
        return cmd_interest(config)
