// Session client over a pluggable channel so component tests can drive the
// protocol without a real socket.

import type { ParticipantInfo, WireMessage } from './types.js'
import { wire } from './types.js'

export interface Channel {
  send(text: string): void
  close(): void
  onMessage(handler: (text: string) => void): void
  onOpen(handler: () => void): void
  onClose(handler: () => void): void
}

export class BrowserChannel implements Channel {
  private ws: WebSocket

  constructor(url: string) {
    this.ws = new WebSocket(url)
  }

  send(text: string) {
    this.ws.send(text)
  }

  close() {
    this.ws.close()
  }

  onMessage(handler: (text: string) => void) {
    this.ws.onmessage = (ev) => handler(String(ev.data))
  }

  onOpen(handler: () => void) {
    this.ws.onopen = handler
  }

  onClose(handler: () => void) {
    this.ws.onclose = handler
  }
}

export class SessionClient {
  readonly sent: WireMessage[] = []
  private utteranceCounter = 0

  constructor(
    private channel: Channel,
    readonly sessionId: string,
    readonly participant: ParticipantInfo,
  ) {}

  onMessage(handler: (msg: WireMessage) => void): void {
    this.channel.onMessage((text) => {
      try {
        handler(JSON.parse(text) as WireMessage)
      } catch {
        console.warn('dropping unparseable frame', text.slice(0, 120))
      }
    })
  }

  onOpen(handler: () => void): void {
    this.channel.onOpen(handler)
  }

  onClose(handler: () => void): void {
    this.channel.onClose(handler)
  }

  close(): void {
    this.channel.close()
  }

  private post(msg: WireMessage): void {
    this.sent.push(msg)
    this.channel.send(JSON.stringify(msg))
  }

  join(): void {
    this.post(wire('Join', this.sessionId, { participant: this.participant }))
  }

  startUtterance(): string {
    this.utteranceCounter += 1
    const id = `${this.participant.id}-${this.utteranceCounter}`
    this.post(wire('UtteranceStart', this.sessionId, { utterance_id: id }))
    return id
  }

  endUtterance(utteranceId: string, text: string, translate: boolean, practice = false): void {
    this.post(
      wire('UtteranceEnd', this.sessionId, {
        utterance_id: utteranceId,
        text,
        translate_requested: translate,
        practice,
      }),
    )
  }

  /** Answers stay between this client and the server; nothing reaches the
   * partner. */
  submitAnswer(itemId: string, answer: string): void {
    this.post(wire('LearningAnswer', this.sessionId, { item_id: itemId, answer }))
  }

  /** Request a manual visibility flip; the indicator follows the echo. */
  setOverride(on: boolean): void {
    this.post(wire('VisibilityUpdate', this.sessionId, { override: on }))
  }
}
