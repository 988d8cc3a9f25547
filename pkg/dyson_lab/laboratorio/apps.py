from django.apps import AppConfig


class LaboratorioConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'laboratorio'
    verbose_name = "Laboratorio Dyson"
