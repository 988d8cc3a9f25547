"""
Django settings for dyson_lab project.

Generated by 'django-admin startproject' using Django 4.2.16, ridotto al
necessario per un progetto a riga di comando (nessuna parte web).

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""
import os
from dotenv import load_dotenv
from pathlib import Path

#carico da eventuale file .env presente nella stessa directory del settings.py le variabili di ambiente
dotenv_path = Path(__file__).resolve().parent.joinpath('.env')
load_dotenv(dotenv_path=dotenv_path, verbose=False, override=True)


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-dyson-lab-solo-uso-locale')

DEBUG = True
if os.environ.get('DJANGO_DEBUG', 'True') == 'False':
    DEBUG = False

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'laboratorio',
]

MIDDLEWARE = []


# Database
# https://docs.djangoproject.com/en/4.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('LAB_DATABASE', BASE_DIR / 'db.sqlite3'),
    }
}


# Internationalization
# https://docs.djangoproject.com/en/4.2/topics/i18n/

LANGUAGE_CODE = 'it-it'

TIME_ZONE = 'Europe/Rome'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# ---- Laboratorio ----

# radice per i percorsi --out relativi
LAB_OUT_ROOT = Path(os.environ.get('LAB_OUT_ROOT', BASE_DIR / 'runs'))
# parallelismo di default per gli sweep
LAB_JOBS = int(os.environ.get('LAB_JOBS', '1'))
# convenzione di default: 'raw' (libreria) oppure 'reduced' (diffusione 1)
LAB_CONVENTION = os.environ.get('LAB_CONVENTION', 'raw')
# registro delle esecuzioni su database
LAB_RECORD_RUNS = True
if os.environ.get('LAB_RECORD_RUNS', 'True') == 'False':
    LAB_RECORD_RUNS = False


# ---- Logging ----

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'semplice': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'semplice',
        },
    },
    'loggers': {
        'laboratorio': {
            'handlers': ['console'],
            'level': os.environ.get('DJANGO_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
