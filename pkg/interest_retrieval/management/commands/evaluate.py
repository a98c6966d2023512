from ...pipeline import STRATEGIES, cmd_evaluate
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Calcule Precision/Recall/NDCG@k, et sur demande les rapports par décile et de popularité."
    stage = 'evaluate'
    stage_options = ('strategy', 'deciles', 'reference', 'popularity', 'combine', 'training_time')

    def add_stage_arguments(self, parser):
        parser.add_argument('--strategy', choices=STRATEGIES, required=True)
        parser.add_argument('--deciles', action='store_true',
                            help="NDCG par décile d'engagement train.")
        parser.add_argument('--reference', metavar='USERS_TSV',
                            help="Rapport par utilisateur de référence pour le gain relatif.")
        parser.add_argument('--popularity', action='store_true',
                            help="Courbe de popularité et rang moyen des items recommandés.")
        parser.add_argument('--combine', nargs='+', default=[], metavar='REPORT_JSON',
                            help="Agrège des rapports de plusieurs graines.")
        parser.add_argument('--training-time', nargs=2, default=[], dest='training_time',
                            metavar=('VANILLA_LOG', 'UIC_LOG'),
                            help="Compare deux journaux d'entraînement.")

    def run_stage(self, config, **options):
        return cmd_evaluate(
            config, options['strategy'],
            deciles=options.get('deciles', False),
            reference=options.get('reference'),
            popularity=options.get('popularity', False),
            combine=options.get('combine') or (),
            training_time=options.get('training_time') or (),
        )
