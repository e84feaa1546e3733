#!/usr/bin/env python
"""
epi-ctrl 入口脚本

epi_ctrl.py <mode> --scenario <path> --out <dir> [--seed N] [--dt X] [--horizon T]
等价于 python manage.py epi_ctrl ...，退出码与管理命令一致。
"""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "epictrl.settings")
    from django.core.management import execute_from_command_line

    execute_from_command_line([sys.argv[0], 'epi_ctrl', *sys.argv[1:]])


if __name__ == "__main__":
    main()
