"""
errors.py
Hierarquia de exceções do toolkit.
O main.py traduz cada família num código de saída (2 = validação, 1 = execução).
"""


class ToolkitError(Exception):
    """Base de todos os erros levantados pelos módulos."""


class ConfigError(ToolkitError, ValueError):
    """Config ou argumento inválido (chave desconhecida, invariante violada...)."""


class ScheduleDomainError(ConfigError):
    """Avaliação de schedule fora do domínio (n > N, n = 0 com b < 0, N ausente)."""


class FitError(ToolkitError, ValueError):
    """Ajuste impossível: poucos pontos, T repetido, célula sem runs concluídos."""


class StoreWriteError(ToolkitError):
    """Falha ao gravar no record store. Aborta o sweep."""


class DivergenceError(ToolkitError):
    """Loss não-finita durante o treino."""

    def __init__(self, mensagem: str, tokens_seen: int = 0):
        super().__init__(mensagem)
        self.tokens_seen = tokens_seen
