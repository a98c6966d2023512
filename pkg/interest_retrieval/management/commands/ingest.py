from ...pipeline import cmd_ingest
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Lit le jeu d'interactions, filtre par degré et écrit dataset/train/val/test."
    stage = 'ingest'

    def run_stage(self, config, **options):
        return cmd_ingest(config)
