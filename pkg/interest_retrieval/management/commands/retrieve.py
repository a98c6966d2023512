from ...pipeline import STRATEGIES, cmd_retrieve
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Produit les recommandations top-K des utilisateurs test et chronomètre l'inférence."
    stage = 'retrieve'
    stage_options = ('strategy', 'users')

    def add_stage_arguments(self, parser):
        parser.add_argument('--strategy', choices=STRATEGIES, required=True)
        parser.add_argument('--users', type=int, default=None, metavar='N',
                            help="Limite le chronométrage aux N premiers utilisateurs test.")

    def run_stage(self, config, **options):
        return cmd_retrieve(config, options['strategy'], options.get('users'))
