from django.db import models
from django.core.validators import MinValueValidator, MaxValueValidator

# ================= JOURNAL DES EXÉCUTIONS =================
# Les heures murales ne vivent qu'ici, jamais dans les artefacts.

class PipelineRun(models.Model):
    STATUS_CHOICES = (
        ('running', 'En cours'),
        ('succeeded', 'Réussie'),
        ('failed', 'Échouée'),
    )

    command = models.CharField(max_length=20, verbose_name="Commande")
    config_hash = models.CharField(max_length=12, blank=True, verbose_name="Empreinte de configuration")
    seed = models.BigIntegerField(null=True, blank=True, verbose_name="Graine")
    arguments = models.JSONField(default=dict, blank=True, verbose_name="Options")
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running', verbose_name="Statut")
    exit_code = models.IntegerField(null=True, blank=True, verbose_name="Code de sortie")
    message = models.TextField(blank=True, verbose_name="Message")
    started_at = models.DateTimeField(auto_now_add=True, verbose_name="Début")
    finished_at = models.DateTimeField(null=True, blank=True, verbose_name="Fin")

    def __str__(self):
        return f"{self.command} [{self.config_hash}] - {self.get_status_display()}"

    @property
    def duration(self):
        if self.finished_at is None:
            return None
        return (self.finished_at - self.started_at).total_seconds()

    class Meta:
        ordering = ['-started_at']
        verbose_name = "Exécution du pipeline"
        verbose_name_plural = "Exécutions du pipeline"


class ArtifactRecord(models.Model):
    run = models.ForeignKey(PipelineRun, on_delete=models.CASCADE, related_name='artifacts')
    kind = models.CharField(max_length=40, verbose_name="Type d'artefact")
    path = models.CharField(max_length=500, verbose_name="Chemin")
    sha256 = models.CharField(max_length=64, verbose_name="SHA-256")
    size_bytes = models.BigIntegerField(validators=[MinValueValidator(0)], verbose_name="Taille (octets)")
    created_at = models.DateTimeField(auto_now_add=True)

    def __str__(self):
        return f"{self.kind} : {self.path}"

    class Meta:
        ordering = ['run', 'kind', 'path']
        verbose_name = "Artefact"
        verbose_name_plural = "Artefacts"


class GridTrial(models.Model):
    run = models.ForeignKey(PipelineRun, on_delete=models.CASCADE, related_name='grid_trials')
    parameters = models.JSONField(verbose_name="Paramètres")
    val_recall = models.FloatField(
        validators=[MinValueValidator(0.0), MaxValueValidator(1.0)],
        verbose_name="Recall@50 (validation)"
    )
    best_epoch = models.PositiveIntegerField(default=0, verbose_name="Meilleur epoch")
    selected = models.BooleanField(default=False, verbose_name="Retenu")

    def __str__(self):
        marker = " *" if self.selected else ""
        return f"{self.parameters} -> {self.val_recall:.4f}{marker}"

    class Meta:
        ordering = ['run', '-val_recall']
        verbose_name = "Point de grille"
        verbose_name_plural = "Points de grille"
