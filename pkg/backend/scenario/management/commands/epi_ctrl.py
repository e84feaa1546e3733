"""
Django管理命令：按场景文件运行一次流水线

使用方法：
python manage.py epi_ctrl <mode> --scenario <path> --out <dir> [--seed N] [--dt X] [--horizon T]

退出码：0 成功，2 场景解析或校验失败，3 求解未收敛，4 运行期或数值错误。
失败时输出目录中会有 error.json。
"""

import logging

from django.core.management.base import BaseCommand

from epidemic.exceptions import ScenarioParseError, ScenarioValidationError
from scenario.loader import parse_scenario
from scenario.outputs import write_error_json
from scenario.pipelines import EXIT_VALIDATION, PIPELINE_REGISTRY, error_details, run_scenario

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    """运行受控 SEIR 场景的管理命令"""

    help = '按场景文件运行模拟、优化、延拓或扫描，并把结果写入输出目录'

    def add_arguments(self, parser):
        """添加命令行参数"""
        parser.add_argument('mode', choices=sorted(PIPELINE_REGISTRY), help='运行模式，覆盖场景中的 run.mode')
        parser.add_argument('--scenario', required=True, help='场景文件路径（section.key = value 文本或 JSON）')
        parser.add_argument('--out', required=True, help='输出目录，不存在时自动创建')
        parser.add_argument('--seed', type=int, help='覆盖 run.seed')
        parser.add_argument('--dt', type=float, help='覆盖 run.dt')
        parser.add_argument('--horizon', type=float, help='覆盖 run.horizon')

    def handle(self, *args, **options):
        """执行命令的主要逻辑"""
        mode = options['mode']
        out_dir = options['out']
        overrides = {
            'run.seed': options.get('seed'),
            'run.dt': options.get('dt'),
            'run.horizon': options.get('horizon'),
        }

        try:
            scenario = parse_scenario(options['scenario'], mode=mode, overrides=overrides)
        except (ScenarioParseError, ScenarioValidationError) as e:
            logger.warning(f"场景文件无效: {str(e)}")
            write_error_json(out_dir, EXIT_VALIDATION, type(e).__name__, str(e), error_details(e))
            self.stderr.write(self.style.ERROR(f'场景文件无效: {e}'))
            raise SystemExit(EXIT_VALIDATION)

        result = run_scenario(scenario, out_dir)
        for name, path in sorted(result.outputs.items()):
            self.stdout.write(f'{name}: {path}')

        if not result.success:
            self.stderr.write(self.style.ERROR(f'{mode} 失败（退出码 {result.exit_code}）: {result.error_message}'))
            raise SystemExit(result.exit_code)
        self.stdout.write(self.style.SUCCESS(f'{mode} 完成，结果已写入 {out_dir}'))
