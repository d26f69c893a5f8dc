"""
Django settings for the bullbear_duality project.

The project has no web surface: it hosts the `portfolio` app, whose management
commands drive the partial-information consumption-investment pipeline
(simulation, filtering, BLR checks, dual PIDE solve, Monte Carlo verification).

Run defaults live in the PORTFOLIO dict below. Each entry can be overridden from
the environment and, at run time, by the matching command-line flag.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'BULLBEAR_SECRET_KEY',
    'django-insecure-bullbear-duality-local-only',
)

DEBUG = os.environ.get('BULLBEAR_DEBUG', '0') == '1'

ALLOWED_HOSTS = ['localhost', '127.0.0.1']


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'portfolio',
]


# Database
# Only used for RunManifest records (`--record`) and by the test runner.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

LOG_LEVEL = os.environ.get('BULLBEAR_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'portfolio': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}


# Pipeline defaults

PORTFOLIO = {
    'OUTPUT_DIR': os.environ.get('BULLBEAR_OUTPUT_DIR', str(BASE_DIR / 'runs')),
    'DEFAULT_SEED': int(os.environ.get('BULLBEAR_SEED', '20240611')),
    'DEFAULT_PATHS': 20000,
    'DEFAULT_DT': 1e-3,
    'GRID_NX': 101,
    'GRID_NT': 2000,
    'QUAD_NODES': 128,
    'BLOCK_SIZE': 5000,
    'WORKERS': int(os.environ.get('BULLBEAR_WORKERS', os.cpu_count() or 1)),
    'C_DISC': 1.0,
    'ARTIFACT_VERSION': '1.0.0',
}
