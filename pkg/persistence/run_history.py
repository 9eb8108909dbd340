"""
训练运行历史数据库
记录每次训练运行及其逐项损失，供后续对比消融实验使用
"""
import json
import os
import sqlite3
import uuid
from datetime import datetime
from typing import Any, Dict, List, Optional


class RunHistoryDB:
    """训练运行历史数据库管理类"""
    
    def __init__(self, db_path: str = "data/run_history.db"):
        """
        初始化历史数据库
        
        Args:
            db_path: 数据库文件路径
        """
        self.db_path = db_path
        
        # 确保数据目录存在
        directory = os.path.dirname(db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        
        self._init_database()
    
    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.db_path)
    
    def _init_database(self):
        """初始化数据库表结构"""
        conn = self._connect()
        cursor = conn.cursor()
        
        # 训练运行表（每次 fit 一条记录）
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS training_runs (
                run_id TEXT PRIMARY KEY,
                run_dir TEXT,
                start_time TEXT NOT NULL,
                end_time TEXT,
                config_hash TEXT,
                config_json TEXT,
                start_iteration INTEGER DEFAULT 0,
                final_iteration INTEGER,
                final_losses_json TEXT,
                status TEXT DEFAULT 'running'
            )
        ''')
        
        # 逐项损失表
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS loss_records (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                iteration INTEGER NOT NULL,
                term TEXT NOT NULL,
                value REAL NOT NULL,
                FOREIGN KEY (run_id) REFERENCES training_runs(run_id)
            )
        ''')
        
        conn.commit()
        conn.close()
    
    def create_run(self, config: Dict[str, Any], config_hash: str,
                   run_dir: Optional[str] = None, start_iteration: int = 0) -> str:
        """
        创建新的训练运行
        
        Args:
            config: 完整配置
            config_hash: 配置摘要
            run_dir: 运行目录
            start_iteration: 起始迭代（从检查点恢复时非零）
            
        Returns:
            run_id: 运行ID
        """
        run_id = f"{datetime.now().strftime('%Y%m%d_%H%M%S')}_{uuid.uuid4().hex[:6]}"
        start_time = datetime.now().isoformat()
        
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute('''
            INSERT INTO training_runs
            (run_id, run_dir, start_time, config_hash, config_json, start_iteration, status)
            VALUES (?, ?, ?, ?, ?, ?, 'running')
        ''', (run_id, run_dir, start_time, config_hash,
              json.dumps(config, ensure_ascii=False, default=str), start_iteration))
        conn.commit()
        conn.close()
        
        return run_id
    
    def save_losses(self, run_id: str, iteration: int, breakdown: Dict[str, float]):
        """
        保存一次迭代的损失分解
        
        Args:
            run_id: 运行ID
            iteration: 迭代序号
            breakdown: 项名 -> 数值
        """
        conn = self._connect()
        cursor = conn.cursor()
        cursor.executemany('''
            INSERT INTO loss_records (run_id, iteration, term, value)
            VALUES (?, ?, ?, ?)
        ''', [(run_id, iteration, term, float(value)) for term, value in breakdown.items()])
        conn.commit()
        conn.close()
    
    def complete_run(self, run_id: str, final_iteration: int, final_losses: Dict[str, float],
                     status: str = 'completed'):
        """更新运行为结束状态（completed / failed）"""
        end_time = datetime.now().isoformat()
        
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute('''
            UPDATE training_runs
            SET end_time = ?,
                final_iteration = ?,
                final_losses_json = ?,
                status = ?
            WHERE run_id = ?
        ''', (end_time, final_iteration, json.dumps(final_losses), status, run_id))
        conn.commit()
        conn.close()
    
    def get_run_list(self, limit: int = 50) -> List[Dict[str, Any]]:
        """
        获取历史运行列表
        
        Args:
            limit: 返回数量限制
        """
        conn = self._connect()
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()
        cursor.execute('''
            SELECT run_id, run_dir, start_time, end_time, config_hash,
                   start_iteration, final_iteration, final_losses_json, status
            FROM training_runs
            ORDER BY start_time DESC
            LIMIT ?
        ''', (limit,))
        runs = [dict(row) for row in cursor.fetchall()]
        conn.close()
        return runs
    
    def get_loss_curve(self, run_id: str, term: str = 'total') -> List[Dict[str, Any]]:
        """获取某一损失项随迭代的曲线"""
        conn = self._connect()
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()
        cursor.execute('''
            SELECT iteration, value FROM loss_records
            WHERE run_id = ? AND term = ?
            ORDER BY iteration
        ''', (run_id, term))
        curve = [dict(row) for row in cursor.fetchall()]
        conn.close()
        return curve
    
    def delete_run(self, run_id: str):
        """删除指定运行及其损失记录"""
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute('DELETE FROM loss_records WHERE run_id = ?', (run_id,))
        cursor.execute('DELETE FROM training_runs WHERE run_id = ?', (run_id,))
        conn.commit()
        conn.close()
    
    def get_statistics(self) -> Dict[str, Any]:
        """运行统计：总数 / 完成数 / 失败数"""
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute('SELECT status, COUNT(*) FROM training_runs GROUP BY status')
        counts = {status: count for status, count in cursor.fetchall()}
        conn.close()
        return {
            'total_runs': sum(counts.values()),
            'completed_runs': counts.get('completed', 0),
            'failed_runs': counts.get('failed', 0),
            'running_runs': counts.get('running', 0),
        }
