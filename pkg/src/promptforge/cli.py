"""Admin command line: run the service, mint tokens, export logs, lint packs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .content import load_content_pack, load_default_pack
from .errors import PackParseError, PackValidationError, PromptForgeError
from .service import load_config, parse_listen
from .storage import TOKENS_FILE, EventStore, TokenRegistry


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = load_config(args.config)
    app = create_app(config)
    host, port = parse_listen(config.listen)
    uvicorn.run(app, host=host, port=port, log_level="info")
    return 0


def _cmd_mint_token(args: argparse.Namespace) -> int:
    store_dir = Path(args.store)
    store_dir.mkdir(parents=True, exist_ok=True)
    registry = TokenRegistry(store_dir / TOKENS_FILE)
    token = registry.mint(args.user, admin=args.admin)
    # The plaintext token is printed exactly once; only its hash is stored.
    print(token)
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    pack = load_content_pack(args.pack) if args.pack else load_default_pack()
    store = EventStore(args.store, pack)
    store.open()
    try:
        records = store.export_events(
            session_id=args.session,
            user_id=args.user,
            since=args.since,
            until=args.until,
        )
    finally:
        store.close()
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for record in records:
            out.write(json.dumps(record.to_dict(), separators=(",", ":")) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_validate_pack(args: argparse.Namespace) -> int:
    try:
        pack = load_content_pack(args.path)
    except PackParseError as exc:
        print(f"PARSE ERROR: {exc.message}", file=sys.stderr)
        return 1
    except PackValidationError as exc:
        for violation in exc.violations:
            print(violation, file=sys.stderr)
        print(f"INVALID: {len(exc.violations)} violation(s)", file=sys.stderr)
        return 1
    print(
        f"OK: {len(pack.scenarios)} scenarios, "
        f"{sum(len(s) for s in pack.steps.values())} steps, "
        f"{len(pack.criteria)} criteria"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptforge", description="Guided prompt-builder service admin tool"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", help="YAML config file (env vars override)")
    serve.set_defaults(fn=_cmd_serve)

    mint = sub.add_parser("mint-token", help="mint a bearer token for a user")
    mint.add_argument("--store", required=True, help="store directory")
    mint.add_argument("--user", required=True, help="user id the token belongs to")
    mint.add_argument("--admin", action="store_true", help="grant admin rights")
    mint.set_defaults(fn=_cmd_mint_token)

    export = sub.add_parser("export", help="dump the event log as JSON lines")
    export.add_argument("--store", required=True, help="store directory")
    export.add_argument("--pack", help="content pack path (default: bundled pack)")
    export.add_argument("--session", help="only this session id")
    export.add_argument("--user", help="only sessions of this user id")
    export.add_argument("--since", type=int, help="minimum event timestamp (ms)")
    export.add_argument("--until", type=int, help="maximum event timestamp (ms)")
    export.add_argument("--out", help="output file (default: stdout)")
    export.set_defaults(fn=_cmd_export)

    validate = sub.add_parser("validate-pack", help="check a content pack")
    validate.add_argument("path", help="pack file to validate")
    validate.set_defaults(fn=_cmd_validate_pack)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PromptForgeError as exc:
        print(f"ERROR [{exc.code}]: {exc.message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
