from django.apps import AppConfig


class InterestRetrievalConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'interest_retrieval'
    verbose_name = "Recherche par clusters d'intérêt"
