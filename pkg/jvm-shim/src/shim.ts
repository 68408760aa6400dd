/**
 * The shim host: plays the role of the in-process agent for a simulated
 * class-loading run.
 *
 * Guard mode streams each class definition to the watchdog as one frame and
 * blocks until the reply arrives; a DENY halts the host before the class's
 * side effect runs.  Dump mode appends the same frames to a .bomitrc trace
 * instead, for later dynamic indexing.  The shim never alters class bytes.
 */

import crypto from "node:crypto";
import fs from "node:fs";
import net from "node:net";

import {
  encodeFrame,
  Reply,
  STATUS_ALLOW,
  TRACE_MAGIC,
} from "./frames.js";

export interface Endpoint {
  host: string;
  port: number;
}

export interface AgentConfig {
  mode: "guard" | "dump";
  endpoint?: Endpoint;
  path?: string;
  failopen: boolean;
  filter: "default" | "all";
}

export class ShimError extends Error {}

/**
 * Agent argument string, same shape the JVM would pass after -javaagent:
 *
 *     mode=guard,endpoint=127.0.0.1:4711[,failopen=true]
 *     mode=dump,path=trace.bomitrc[,filter=all]
 */
export function parseAgentArgs(text: string): AgentConfig {
  const fields = new Map<string, string>();
  for (const part of text.split(",")) {
    const eq = part.indexOf("=");
    if (eq <= 0) {
      throw new ShimError(`bad agent argument ${JSON.stringify(part)}`);
    }
    fields.set(part.slice(0, eq).trim(), part.slice(eq + 1).trim());
  }
  const mode = fields.get("mode");
  if (mode !== "guard" && mode !== "dump") {
    throw new ShimError(`mode must be guard or dump, got ${JSON.stringify(mode ?? "")}`);
  }
  const failopen = fields.get("failopen") === "true";
  const filter = fields.get("filter") === "all" ? "all" : "default";
  if (mode === "guard") {
    const raw = fields.get("endpoint");
    if (!raw) {
      throw new ShimError("guard mode needs endpoint=host:port");
    }
    const colon = raw.lastIndexOf(":");
    const port = Number(raw.slice(colon + 1));
    if (colon <= 0 || !Number.isInteger(port) || port < 0 || port > 65535) {
      throw new ShimError(`bad endpoint ${JSON.stringify(raw)}`);
    }
    return { mode, endpoint: { host: raw.slice(0, colon), port }, failopen, filter };
  }
  const path = fields.get("path");
  if (!path) {
    throw new ShimError("dump mode needs path=trace.bomitrc");
  }
  return { mode, path, failopen, filter };
}

// name families the verifier rewrites before hashing; dump mode keeps these
// even when a platform loader defined them
const GENERATED_NAME_PATTERNS = [
  /^(?:com\/sun\/proxy\/|jdk\/proxy\d+\/)?\$Proxy\d+$/,
  /^jdk\/internal\/reflect\/Generated(?:Constructor|Method|SerializationConstructor)Accessor\d+$/,
  /^.*\$\$(?:EnhancerBy|FastClassBy)\w+\$\$[0-9a-f]+$/,
  /^jdk\/nashorn\/internal\/scripts\/Script\$.*$/,
];

export function isGeneratedName(name: string): boolean {
  return GENERATED_NAME_PATTERNS.some((p) => p.test(name));
}

/**
 * One connection to the watchdog, one frame in flight at a time.  Checks are
 * serialized: concurrent callers queue behind the pending reply.
 */
export class GuardClient {
  private buf: Buffer = Buffer.alloc(0);
  private waiter: { resolve: (r: Reply) => void; reject: (e: Error) => void } | null = null;
  private queue: Promise<unknown> = Promise.resolve();
  private failure: Error | null = null;

  private constructor(private readonly socket: net.Socket) {
    socket.on("data", (chunk: Buffer) => {
      this.buf = Buffer.concat([this.buf, chunk]);
      if (this.waiter && this.buf.length >= 2) {
        const reply = { status: this.buf[0], reason: this.buf[1] };
        this.buf = this.buf.subarray(2);
        const w = this.waiter;
        this.waiter = null;
        w.resolve(reply);
      }
    });
    const fail = (err: Error) => {
      this.failure = err;
      if (this.waiter) {
        const w = this.waiter;
        this.waiter = null;
        w.reject(err);
      }
    };
    socket.on("error", fail);
    socket.on("close", () => fail(new ShimError("watchdog connection lost")));
  }

  static connect(endpoint: Endpoint, timeoutMs = 10_000): Promise<GuardClient> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host: endpoint.host, port: endpoint.port });
      socket.setNoDelay(true);
      const timer = setTimeout(() => {
        socket.destroy();
        reject(new ShimError(`timed out connecting to ${endpoint.host}:${endpoint.port}`));
      }, timeoutMs);
      socket.once("connect", () => {
        clearTimeout(timer);
        resolve(new GuardClient(socket));
      });
      socket.once("error", (err) => {
        clearTimeout(timer);
        reject(new ShimError(`cannot reach watchdog at ${endpoint.host}:${endpoint.port}: ${err.message}`));
      });
    });
  }

  check(name: string, data: Buffer): Promise<Reply> {
    const run = () =>
      new Promise<Reply>((resolve, reject) => {
        if (this.failure) {
          reject(this.failure);
          return;
        }
        this.waiter = { resolve, reject };
        this.socket.write(encodeFrame(name, data));
      });
    const next = this.queue.then(run, run);
    this.queue = next.catch(() => undefined);
    return next;
  }

  close(): void {
    this.socket.removeAllListeners("close");
    this.socket.destroy();
  }
}

export interface ScenarioClass {
  name: string;
  /** path to the classfile, resolved by the caller */
  file: string;
  /** side-effect file the class writes when it executes */
  marker?: string;
  /** defining loader; platform classes are skipped by the default dump filter */
  loader?: "platform" | "app";
}

export interface Scenario {
  classes: ScenarioClass[];
}

export interface RunResult {
  status: number;
  checked: number;
  executed: number;
  denied?: { name: string; reply: Reply };
}

export const EXIT_DENIED = 13;

/** The class's observable side effect: its marker file plus a host log line. */
function execute(cls: ScenarioClass, log: (line: string) => void): void {
  if (cls.marker) {
    fs.writeFileSync(cls.marker, `${cls.name}\n`);
  }
  log(`ran ${cls.name}`);
}

function digest(name: string, data: Buffer): string {
  return `${name}:${crypto.createHash("sha256").update(data).digest("hex")}`;
}

/**
 * Run a scenario under the given agent config; null means no agent attached.
 * Returns instead of exiting so tests can call it in-process; the CLI turns
 * a DENY into an immediate hard halt.
 */
export async function runScenario(
  scenario: Scenario,
  config: AgentConfig | null,
  log: (line: string) => void,
  warn: (line: string) => void,
): Promise<RunResult> {
  if (config === null) {
    for (const cls of scenario.classes) {
      execute(cls, log);
    }
    return { status: 0, checked: 0, executed: scenario.classes.length };
  }

  if (config.mode === "dump") {
    const fd = fs.openSync(config.path!, "a");
    try {
      if (fs.fstatSync(fd).size === 0) {
        fs.writeSync(fd, TRACE_MAGIC);
      }
      let dumped = 0;
      for (const cls of scenario.classes) {
        const keep =
          config.filter === "all" || cls.loader !== "platform" || isGeneratedName(cls.name);
        if (keep) {
          fs.writeSync(fd, encodeFrame(cls.name, fs.readFileSync(cls.file)));
          dumped += 1;
        }
        execute(cls, log);
      }
      return { status: 0, checked: dumped, executed: scenario.classes.length };
    } finally {
      fs.closeSync(fd);
    }
  }

  let client: GuardClient;
  try {
    client = await GuardClient.connect(config.endpoint!);
  } catch (err) {
    if (!config.failopen) {
      throw err;
    }
    warn(`shim: ${(err as Error).message}; failopen=true, passing through`);
    for (const cls of scenario.classes) {
      execute(cls, log);
    }
    return { status: 0, checked: 0, executed: scenario.classes.length };
  }

  const seen = new Map<string, Reply>();
  let checked = 0;
  let executed = 0;
  try {
    for (const cls of scenario.classes) {
      const data = fs.readFileSync(cls.file);
      const key = digest(cls.name, data);
      let reply = seen.get(key);
      if (reply === undefined) {
        try {
          reply = await client.check(cls.name, data);
        } catch (err) {
          if (!config.failopen) {
            throw err;
          }
          warn(`shim: ${(err as Error).message}; failopen=true, passing through`);
          reply = { status: STATUS_ALLOW, reason: 0 };
        }
        checked += 1;
        seen.set(key, reply);
      }
      if (reply.status !== STATUS_ALLOW) {
        return { status: EXIT_DENIED, checked, executed, denied: { name: cls.name, reply } };
      }
      execute(cls, log);
      executed += 1;
    }
  } finally {
    client.close();
  }
  return { status: 0, checked, executed };
}
