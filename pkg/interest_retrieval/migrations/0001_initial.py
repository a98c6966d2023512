# Generated by Django 5.2.7 on 2026-10-19 09:12

import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='PipelineRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=20, verbose_name='Commande')),
                ('config_hash', models.CharField(blank=True, max_length=12, verbose_name='Empreinte de configuration')),
                ('seed', models.BigIntegerField(blank=True, null=True, verbose_name='Graine')),
                ('arguments', models.JSONField(blank=True, default=dict, verbose_name='Options')),
                ('status', models.CharField(choices=[('running', 'En cours'), ('succeeded', 'Réussie'), ('failed', 'Échouée')], default='running', max_length=10, verbose_name='Statut')),
                ('exit_code', models.IntegerField(blank=True, null=True, verbose_name='Code de sortie')),
                ('message', models.TextField(blank=True, verbose_name='Message')),
                ('started_at', models.DateTimeField(auto_now_add=True, verbose_name='Début')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='Fin')),
            ],
            options={
                'verbose_name': 'Exécution du pipeline',
                'verbose_name_plural': 'Exécutions du pipeline',
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='ArtifactRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('kind', models.CharField(max_length=40, verbose_name="Type d'artefact")),
                ('path', models.CharField(max_length=500, verbose_name='Chemin')),
                ('sha256', models.CharField(max_length=64, verbose_name='SHA-256')),
                ('size_bytes', models.BigIntegerField(validators=[django.core.validators.MinValueValidator(0)], verbose_name='Taille (octets)')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='artifacts', to='interest_retrieval.pipelinerun')),
            ],
            options={
                'verbose_name': 'Artefact',
                'verbose_name_plural': 'Artefacts',
                'ordering': ['run', 'kind', 'path'],
            },
        ),
        migrations.CreateModel(
            name='GridTrial',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('parameters', models.JSONField(verbose_name='Paramètres')),
                ('val_recall', models.FloatField(validators=[django.core.validators.MinValueValidator(0.0), django.core.validators.MaxValueValidator(1.0)], verbose_name='Recall@50 (validation)')),
                ('best_epoch', models.PositiveIntegerField(default=0, verbose_name='Meilleur epoch')),
                ('selected', models.BooleanField(default=False, verbose_name='Retenu')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='grid_trials', to='interest_retrieval.pipelinerun')),
            ],
            options={
                'verbose_name': 'Point de grille',
                'verbose_name_plural': 'Points de grille',
                'ordering': ['run', '-val_recall'],
            },
        ),
    ]
