"""
Django settings for retrieval_platform project.
Pipeline de recherche par clusters d'intérêt : journal des exécutions en base,
artefacts sur disque.
"""

import os
from pathlib import Path
from dotenv import load_dotenv
import dj_database_url

# Chemin de base du projet
BASE_DIR = Path(__file__).resolve().parent.parent

# Chargement du fichier .env à la racine
load_dotenv(os.path.join(BASE_DIR, '.env'))

# --- SÉCURITÉ ---
SECRET_KEY = os.getenv('SECRET_KEY', 'django-insecure-default-key')
DEBUG = os.getenv('DEBUG', 'True') == 'True'
ALLOWED_HOSTS = ['127.0.0.1', 'localhost']

# --- APPLICATIONS ---
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'interest_retrieval',
]

# --- BASE DE DONNÉES (journal des exécutions uniquement) ---
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

DATABASE_URL = os.getenv('DATABASE_URL')
if DATABASE_URL:
    DATABASES['default'] = dj_database_url.parse(DATABASE_URL, conn_max_age=600)

# --- INTERNATIONALISATION ---
LANGUAGE_CODE = 'fr-fr'
TIME_ZONE = 'Africa/Porto-Novo'
USE_I18N = True
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# --- PIPELINE ---
# Racine des chemins d'artefacts relatifs (`paths.artifacts` dans la config)
PIPELINE_ARTIFACT_ROOT = Path(os.getenv('PIPELINE_ARTIFACT_ROOT', BASE_DIR))
# 0 = tous les cœurs ; la clé `threads` de la config a priorité
PIPELINE_THREADS = int(os.getenv('PIPELINE_THREADS', '0'))

# --- LOGGING (DJANGO_LOG_LEVEL pour la racine, PIPELINE_LOG_LEVEL pour le pipeline) ---
DJANGO_LOG_LEVEL = os.getenv('DJANGO_LOG_LEVEL', 'WARNING')
PIPELINE_LOG_LEVEL = os.getenv('PIPELINE_LOG_LEVEL', 'INFO')
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'pipeline': {'format': '%(asctime)s [%(levelname)s] %(name)s: %(message)s'},
    },
    'handlers': {
        'console': {'class': 'logging.StreamHandler', 'formatter': 'pipeline'},
    },
    'root': {
        'handlers': ['console'],
        'level': DJANGO_LOG_LEVEL,
    },
    'loggers': {
        'interest_retrieval': {
            'handlers': ['console'],
            'level': PIPELINE_LOG_LEVEL,
            'propagate': False,
        },
    },
}
