from ...pipeline import cmd_train
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Entraîne le modèle deux tours et exporte modèle, journal et vecteurs."
    stage = 'train'

    def run_stage(self, config, **options):
        return cmd_train(config)
