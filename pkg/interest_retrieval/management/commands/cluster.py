from ...pipeline import cmd_cluster
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Projette le graphe de co-engagement et le découpe en clusters d'intérêt (Louvain)."
    stage = 'cluster'

    def run_stage(self, config, **options):
        return cmd_cluster(config)
