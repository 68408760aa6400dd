/**
 * Wire codec for the watchdog protocol and the .bomitrc trace format.
 *
 * One frame per class-definition event:
 *
 *     u32 BE name_len | name UTF-8 | u32 BE class_len | class bytes
 *
 * The watchdog answers every frame with exactly two bytes, status then
 * reason.  A trace file is the 8-byte magic followed by frames.
 */

export const TRACE_MAGIC = Buffer.from("BOMITRC1", "latin1");

export const STATUS_ALLOW = 0x00;
export const STATUS_DENY = 0x01;

export const REASON_NONE = 0x00;
export const REASON_NOT_ALLOWLISTED = 0x01;
export const REASON_TAMPERED = 0x02;

export const MAX_NAME_LEN = 1 << 16;
export const MAX_CLASS_LEN = 1 << 26;

export class FrameError extends Error {}

export interface Reply {
  status: number;
  reason: number;
}

export interface ClassEvent {
  name: string;
  data: Buffer;
}

export function encodeFrame(name: string, data: Buffer): Buffer {
  const nameBytes = Buffer.from(name, "utf8");
  if (nameBytes.length > MAX_NAME_LEN) {
    throw new RangeError(`class name is ${nameBytes.length} bytes, cap is ${MAX_NAME_LEN}`);
  }
  if (data.length > MAX_CLASS_LEN) {
    throw new RangeError(`class body is ${data.length} bytes, cap is ${MAX_CLASS_LEN}`);
  }
  const head = Buffer.alloc(4 + nameBytes.length + 4);
  head.writeUInt32BE(nameBytes.length, 0);
  nameBytes.copy(head, 4);
  head.writeUInt32BE(data.length, 4 + nameBytes.length);
  return Buffer.concat([head, data]);
}

export function decodeReply(buf: Buffer): Reply {
  if (buf.length !== 2) {
    throw new FrameError(`reply must be 2 bytes, got ${buf.length}`);
  }
  return { status: buf[0], reason: buf[1] };
}

export function reasonName(reply: Reply): string {
  switch (reply.reason) {
    case REASON_NOT_ALLOWLISTED:
      return "NOT_ALLOWLISTED";
    case REASON_TAMPERED:
      return "TAMPERED";
    default:
      return reply.status === STATUS_DENY ? "DENY" : "ALLOW";
  }
}

/** Parse a whole trace buffer back into events; used by the codec tests. */
export function parseTrace(buf: Buffer): ClassEvent[] {
  if (buf.length < TRACE_MAGIC.length || !buf.subarray(0, TRACE_MAGIC.length).equals(TRACE_MAGIC)) {
    throw new FrameError("missing trace magic");
  }
  const events: ClassEvent[] = [];
  let offset = TRACE_MAGIC.length;
  while (offset < buf.length) {
    if (offset + 4 > buf.length) {
      throw new FrameError(`truncated name length at offset ${offset}`);
    }
    const nameLen = buf.readUInt32BE(offset);
    if (nameLen > MAX_NAME_LEN) {
      throw new FrameError(`name length ${nameLen} over cap at offset ${offset}`);
    }
    offset += 4;
    if (offset + nameLen > buf.length) {
      throw new FrameError(`truncated name at offset ${offset}`);
    }
    const name = buf.subarray(offset, offset + nameLen).toString("utf8");
    offset += nameLen;
    if (offset + 4 > buf.length) {
      throw new FrameError(`truncated class length at offset ${offset}`);
    }
    const classLen = buf.readUInt32BE(offset);
    if (classLen > MAX_CLASS_LEN) {
      throw new FrameError(`class length ${classLen} over cap at offset ${offset}`);
    }
    offset += 4;
    if (offset + classLen > buf.length) {
      throw new FrameError(`truncated class body at offset ${offset}`);
    }
    events.push({ name, data: Buffer.from(buf.subarray(offset, offset + classLen)) });
    offset += classLen;
  }
  return events;
}
