"""예외 정의

ContractError 계열은 호출자 쪽 계약 위반이다 (CLI 종료 코드 1).
그 외 예외는 내부 오류로 취급된다 (종료 코드 2).
"""


class ContractError(ValueError):
    """계약 위반 기본 클래스"""


class InvalidAnnotationError(ContractError):
    """박스 주석이 잘못됨 (크기 <= 0 등)"""


class InvalidDataError(ContractError):
    """입력 데이터가 잘못됨 (음수 intensity, 비유한 좌표 등)"""


class UndefinedAngleError(ContractError):
    """관측 각도를 정의할 수 없음 (박스 중심이 센서 위치)"""


class DimensionError(ContractError):
    """텐서 shape 불일치"""


class CapacityError(ContractError):
    """포인트 수가 모델 용량(max_points)을 초과"""


class ConfigError(ContractError):
    """설정 오류"""


class LabelError(ContractError):
    """분류기가 모르는 클래스"""


class NumericError(ContractError):
    """수치적으로 계산 불가 (특이 공분산 등)"""


class ScanRejectedError(ContractError):
    """스캔 결과가 포인트 수 기준을 벗어남 - 포즈를 다시 샘플링해야 함"""

    def __init__(self, message: str, hits: int):
        super().__init__(message)
        self.hits = hits


class EmptyScanError(ScanRejectedError):
    """어떤 레이도 객체에 맞지 않음"""

    def __init__(self, message: str):
        super().__init__(message, hits=0)


class TrainingDivergedError(RuntimeError):
    """학습 중 손실이 NaN/Inf가 됨"""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
