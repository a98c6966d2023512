from ...models import GridTrial
from ...pipeline import cmd_grid
from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Balaye grid.learning_rate x grid.dropout (x grid.resolution), retient le meilleur Recall@50 val."
    stage = 'grid'

    def run_stage(self, config, **options):
        return cmd_grid(config)

    def record(self, run, result):
        GridTrial.objects.bulk_create([
            GridTrial(
                run=run,
                parameters=trial['parameters'],
                val_recall=trial['val_recall'],
                best_epoch=trial['best_epoch'],
                selected=trial['selected'],
            )
            for trial in result.trials
        ])
