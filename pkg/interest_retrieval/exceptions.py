"""Erreurs métier du pipeline, chacune associée à un code de sortie CLI."""


class PipelineError(Exception):
    """Racine des erreurs du pipeline."""

    exit_code = 1


class ConfigError(PipelineError):
    """Configuration invalide ou commande mal utilisée (code 1)."""

    exit_code = 1


class MissingArtifactError(ConfigError):
    """Un artefact amont est absent : on nomme la commande qui le produit."""

    def __init__(self, path, producer):
        self.path = path
        self.producer = producer
        super().__init__(
            f"Artefact manquant : {path}. Lancez d'abord `manage.py {producer}`."
        )


class DataError(PipelineError):
    """Données d'entrée inexploitables (code 2)."""

    exit_code = 2


class NumericalError(PipelineError):
    """Échec numérique : perte non finie, modularité décroissante (code 3)."""

    exit_code = 3
