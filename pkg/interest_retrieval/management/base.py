import json
import logging
import sys

import torch
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from ..artifacts import file_digest
from ..config import load_config
from ..exceptions import PipelineError
from ..models import ArtifactRecord, PipelineRun

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """
    Socle commun des commandes du pipeline : chargement de la configuration,
    ligne de journal PipelineRun, enregistrement des artefacts et traduction
    des erreurs métier en codes de sortie (1 config, 2 données, 3 numérique).
    """

    stage = None
    stage_options = ()

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        if getattr(self, '_called_from_command_line', False):
            # Erreur d'usage : code 1, comme une erreur de configuration
            def usage_error(message):
                parser.print_usage(sys.stderr)
                parser.exit(1, f"{parser.prog}: error: {message}\n")
            parser.error = usage_error
        return parser

    def add_arguments(self, parser):
        parser.add_argument('--config', metavar='CHEMIN', help="Fichier de configuration `clé = valeur`.")
        parser.add_argument('--set', action='append', default=[], dest='overrides', metavar='CLÉ=VALEUR',
                            help="Surcharge une clé de configuration (répétable).")
        self.add_stage_arguments(parser)

    def add_stage_arguments(self, parser):
        pass

    def run_stage(self, config, **options):
        raise NotImplementedError

    def record(self, run, result):
        """Hook des sous-classes pour des lignes de journal supplémentaires."""

    def handle(self, *args, **options):
        recorded = {k: options.get(k) for k in ('config', 'overrides', *self.stage_options)}
        run = PipelineRun.objects.create(command=self.stage, arguments=json.loads(json.dumps(recorded, default=str)))
        try:
            config = load_config(options.get('config'), options.get('overrides'))
            run.config_hash = config.config_hash
            run.seed = config.seed
            run.save(update_fields=['config_hash', 'seed'])
            torch.set_num_threads(config.threads)
            stage_options = {k: v for k, v in options.items() if k != 'config'}
            result = self.run_stage(config, **stage_options)
        except PipelineError as exc:
            self._finish(run, 'failed', exc.exit_code, str(exc))
            logger.error(f"{self.stage} : {exc}")
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except Exception as exc:
            self._finish(run, 'failed', None, repr(exc))
            raise

        ArtifactRecord.objects.bulk_create([
            ArtifactRecord(run=run, kind=kind, path=str(path), sha256=digest, size_bytes=size)
            for kind, path in result.artifacts
            for digest, size in (file_digest(path),)
        ])
        self.record(run, result)
        self._finish(run, 'succeeded', 0, '')

        for kind, path in result.artifacts:
            self.stdout.write(f"  {kind:<16} {path}")
        self.stdout.write(self.style.SUCCESS(
            f"{self.stage} terminé (config {run.config_hash}, {len(result.artifacts)} artefact(s))."
        ))

    @staticmethod
    def _finish(run, status, exit_code, message):
        run.status = status
        run.exit_code = exit_code
        run.message = message
        run.finished_at = timezone.now()
        run.save(update_fields=['status', 'exit_code', 'message', 'finished_at'])
