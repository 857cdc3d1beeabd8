from . import test_dualnav_tools  # noqa: F401
from . import test_dualnav_webenv  # noqa: F401
from . import test_dualnav_agentcore  # noqa: F401
from . import test_dualnav_system1  # noqa: F401
from . import test_dualnav_system2  # noqa: F401
from . import test_dualnav_switch  # noqa: F401
from . import test_dualnav_harness  # noqa: F401
from . import test_dualnav_cli  # noqa: F401
