import { describe, expect, it } from "vitest";

import { readNdjson } from "../src/ndjson.js";

function streamOf(...chunks: string[]): ReadableStream<Uint8Array> {
  const encoder = new TextEncoder();
  return new ReadableStream({
    start(controller) {
      for (const chunk of chunks) controller.enqueue(encoder.encode(chunk));
      controller.close();
    },
  });
}

async function collect<T>(stream: ReadableStream<Uint8Array>): Promise<T[]> {
  const out: T[] = [];
  for await (const record of readNdjson<T>(stream)) out.push(record);
  return out;
}

describe("readNdjson", () => {
  it("parses one record per line", async () => {
    const got = await collect(streamOf('{"a":1}\n{"a":2}\n'));
    expect(got).toEqual([{ a: 1 }, { a: 2 }]);
  });

  it("handles records split across chunks", async () => {
    const got = await collect(streamOf('{"topic":"probe/p1', '/alert/x","n":1}\n{"n"', ":2}\n"));
    expect(got).toEqual([{ topic: "probe/p1/alert/x", n: 1 }, { n: 2 }]);
  });

  it("skips blank keepalive lines", async () => {
    const got = await collect(streamOf("\n\n", '{"n":1}\n', "\n", '{"n":2}\n\n'));
    expect(got).toEqual([{ n: 1 }, { n: 2 }]);
  });

  it("yields a trailing record without a final newline", async () => {
    const got = await collect(streamOf('{"n":1}'));
    expect(got).toEqual([{ n: 1 }]);
  });
});
