"""
查看训练运行历史：最近的运行列表与某次运行的损失曲线
"""
import argparse
import json
import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from persistence.run_history import RunHistoryDB


parser = argparse.ArgumentParser(description='查看训练运行历史')
parser.add_argument('--db', default='data/run_history.db', help='运行历史数据库路径')
parser.add_argument('--run', default=None, help='显示该运行的损失曲线')
parser.add_argument('--term', default='total', help='损失项名称')
parser.add_argument('--limit', type=int, default=5)
parser.add_argument('--delete', default=None, metavar='RUN_ID', help='删除该运行及其损失记录')
args = parser.parse_args()

if not os.path.exists(args.db):
    print(f"❌ 数据库不存在: {args.db}")
    sys.exit(1)

db = RunHistoryDB(args.db)

if args.delete:
    db.delete_run(args.delete)
    print(f"🗑️ 已删除运行: {args.delete}")

stats = db.get_statistics()
print(f"运行总数: {stats['total_runs']}（完成 {stats['completed_runs']}，失败 {stats['failed_runs']}，"
      f"运行中 {stats['running_runs']}）")

print(f"\n最近的{args.limit}次运行:")
for run in db.get_run_list(args.limit):
    final = json.loads(run['final_losses_json']) if run['final_losses_json'] else {}
    total = final.get('total')
    total_text = f"{total:.4f}" if total is not None else '-'
    print(f"  {run['run_id']}: iter {run['start_iteration']} -> {run['final_iteration']} "
          f"({run['status']}) total={total_text} config={run['config_hash']}")

if args.run:
    curve = db.get_loss_curve(args.run, args.term)
    if not curve:
        print(f"\n❌ 运行 {args.run} 没有 {args.term} 记录")
        sys.exit(1)
    print(f"\n{args.run} 的 {args.term} 曲线:")
    for point in curve:
        print(f"  iter {point['iteration']:>6}: {point['value']:.6f}")
