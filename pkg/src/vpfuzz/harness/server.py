"""VP child process: speaks the framed protocol on stdin/stdout.

    python -m vpfuzz.harness.server

Sends READY once booted, then serves CONFIGURE -> READY|ERROR,
RUN -> RESULT|ERROR and SHUTDOWN.  Nothing but frames goes to stdout.
"""

import os
import sys

from vpfuzz.config import ConfigError, parse_config
from vpfuzz.harness import protocol as proto
from vpfuzz.harness.vp import EmbeddedVp


def _warm_up():
    # Pull compiled kernels in before READY so their load counts as startup.
    from vpfuzz._jit import JIT_ENABLED

    if not JIT_ENABLED:
        return
    from vpfuzz.config import ReturnRegister, VpConfig

    cfg = VpConfig(crash_mode=ReturnRegister(0x1004), image=bytes.fromhex("13000000" "73000000"))
    EmbeddedVp(cfg).run(b"")


def serve(fd_in=0, fd_out=1):
    def send(msg):
        data = proto.encode_frame(msg)
        view = memoryview(data)
        while view:
            n = os.write(fd_out, view)
            view = view[n:]

    _warm_up()
    send(proto.Ready())
    reader = proto.FrameReader()
    vp = None
    while True:
        msg = reader.next()
        if msg is None:
            chunk = os.read(fd_in, 1 << 16)
            if not chunk:
                return 0
            reader.feed(chunk)
            continue
        if isinstance(msg, proto.Configure):
            try:
                cfg = parse_config(msg.text).vp
                vp = EmbeddedVp(cfg, snapshot_at_reset=True).configure()
            except ConfigError as exc:
                send(proto.Error(str(exc)))
                continue
            send(proto.Ready())
        elif isinstance(msg, proto.Run):
            if vp is None:
                send(proto.Error("RUN before CONFIGURE"))
                continue
            r = vp.run(msg.input)
            send(proto.Result(int(r.exit_kind), int(r.crash_reason), r.exit_value & 0xFFFFFFFF,
                              r.instructions, r.exec_us, r.coverage.tobytes()))
        elif isinstance(msg, proto.Shutdown):
            return 0
        else:
            send(proto.Error(f"unexpected {type(msg).__name__} message"))


def main():
    try:
        return serve()
    except proto.ProtocolError as exc:
        print(f"vp server: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
