"""
Django settings for epictrl project.

受控 SEIR 最优控制工具箱的配置。所有功能通过 manage.py epi_ctrl 命令调用，
不提供 HTTP 服务，数据库只用于满足 Django 测试运行器的需要。
"""

from pathlib import Path
import os

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# 读取 backend/.env（不存在时忽略）
load_dotenv(BASE_DIR / '.env')

SECRET_KEY = os.environ.get('EPICTRL_SECRET_KEY', 'epictrl-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'epidemic',  # 受控SEIR动力学与解析结果
    'optimal_control',  # 成本泛函、PMP求解与延拓
    'sensitivity',  # 参数扫描与影子价值
    'scenario',  # 场景文件与命令行
]

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": ":memory:",
    }
}

LANGUAGE_CODE = "zh-hans"

TIME_ZONE = "Asia/Shanghai"

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# 日志级别与日志目录
LOG_LEVEL = os.environ.get('EPICTRL_LOG_LEVEL', 'INFO').upper()
LOGS_DIR = os.environ.get('EPICTRL_LOG_DIR') or os.path.join(BASE_DIR, 'logs')
os.makedirs(LOGS_DIR, exist_ok=True)

# 配置日志记录
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'DEBUG',
            'class': 'logging.FileHandler',
            'filename': os.path.join(LOGS_DIR, 'epictrl.log'),
            'formatter': 'verbose',
            'encoding': 'utf-8',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'WARNING',
            'propagate': False,
        },
        'epidemic': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'optimal_control': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'sensitivity': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'scenario': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    }
}

# 场景文件未给出时使用的默认值（不是模型本身的参数）
EPICTRL_DEFAULTS = {
    'dt': float(os.environ.get('EPICTRL_DT', 0.01)),
    'cell_dt': 1.0,
    'cost': {
        'c_h': 1.0,
        'c_nh': 1.0,
        'c_v': 0.5,
        'delta': 0.05,
        'kappa': 0.0,
    },
    'solver': {
        'max_iters': 300,
        'damping': 0.5,
        'conv_tol': 1e-5,
        'sing_tol': 1e-8,
        'singular_policy': 'midpoint',
        'adaptive_damping': True,
        'patience': 3,
        'min_damping': 1e-6,
        'conservation_tol': 1e-9,
        'strict_tol': 1e-6,
    },
    'design': {
        'samples': 64,
        'beta': (0.3, 0.7),
        'u_max': (0.01, 0.1),
        'h_max': (0.05, 0.25),
    },
    'seed': int(os.environ.get('EPICTRL_SEED', 0)),
    'workers': int(os.environ.get('EPICTRL_WORKERS', 1)),
}
