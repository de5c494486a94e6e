"""LiDAR 오브젝트 디퓨전 - 조건부 확산 모델로 LiDAR 객체 생성"""

__version__ = "0.1.0"
